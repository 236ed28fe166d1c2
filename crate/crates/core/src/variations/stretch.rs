//! Stretch shapes, time-stretching maps and admissibility densities.

use nalgebra::DVector;

use crate::point_measure_sim::{PointConfiguration, PointEvent};

use super::VariationError;

/// RK4 step for the flow `z' = t_s·Jh(z)` over unit time.
const MAP_STEP: f64 = 1e-4;

/// Supported stretch shapes.
///
/// Both are compactly supported bounded `h`; they differ in whether the
/// *integral* `Jh` also vanishes to the right of the support:
///
/// * [`StretchShape::Boxcar`] — `h = height` on `[s0, s1]`; `Jh` stays at
///   its terminal value beyond `s1`, so the map translates late times by
///   `c_∞ = height·(s1−s0)`.  Maps and rates are closed-form.
/// * [`StretchShape::GridBump`] — the differential-grid shape on `(0, t)`:
///   `Jh` ramps `0 → 1` on `(0, β)` through a `C^∞` mollifier, holds `1` on
///   `(β, t−β)`, and ramps back to `0`; `Jh > 0` strictly inside and `= 0`
///   outside, which is what grid cells require.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StretchShape {
    Boxcar { s0: f64, s1: f64, height: f64 },
    GridBump { t: f64, beta: f64 },
}

/// A stretch `amplitude · h_shape`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStretch {
    shape: StretchShape,
    amplitude: f64,
}

impl TimeStretch {
    pub fn boxcar(s0: f64, s1: f64, height: f64) -> Result<Self, VariationError> {
        if !(s0 >= 0.0 && s0 < s1 && height > 0.0) {
            return Err(VariationError::InvalidParams(format!(
                "boxcar needs 0 ≤ s0 < s1 and positive height, got [{s0}, {s1}], {height}"
            )));
        }
        Ok(Self {
            shape: StretchShape::Boxcar { s0, s1, height },
            amplitude: 1.0,
        })
    }

    pub fn grid_bump(t: f64, beta: f64) -> Result<Self, VariationError> {
        if !(t > 0.0 && beta > 0.0 && beta < 0.5 * t) {
            return Err(VariationError::InvalidParams(format!(
                "grid bump needs 0 < beta < t/2, got t = {t}, beta = {beta}"
            )));
        }
        Ok(Self {
            shape: StretchShape::GridBump { t, beta },
            amplitude: 1.0,
        })
    }

    /// The stretch `c·h` (negative `c` flips the flow direction).
    pub fn scaled(mut self, c: f64) -> Self {
        self.amplitude *= c;
        self
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn shape(&self) -> StretchShape {
        self.shape
    }

    /// Support of `h` on the time axis.
    pub fn support(&self) -> (f64, f64) {
        match self.shape {
            StretchShape::Boxcar { s0, s1, .. } => (s0, s1),
            StretchShape::GridBump { t, .. } => (0.0, t),
        }
    }

    /// Whether the shape satisfies the grid-cell requirement: `Jh > 0`
    /// strictly inside its interval and `Jh = 0` outside.
    pub fn grid_compatible(&self) -> bool {
        matches!(self.shape, StretchShape::GridBump { .. }) && self.amplitude > 0.0
    }

    /// `h(x)` including the amplitude.
    pub fn h(&self, x: f64) -> f64 {
        self.amplitude * self.shape_h(x)
    }

    /// `Jh(x) = ∫_0^x h` including the amplitude.
    pub fn jh(&self, x: f64) -> f64 {
        self.amplitude * self.shape_jh(x)
    }

    /// `c_∞ = lim_{t→∞} (T_h t − t)`: the terminal value of `Jh` — zero for
    /// grid bumps, `amplitude·height·(s1−s0)` for boxcars.
    pub fn c_infinity(&self) -> f64 {
        match self.shape {
            StretchShape::Boxcar { s0, s1, height } => self.amplitude * height * (s1 - s0),
            StretchShape::GridBump { .. } => 0.0,
        }
    }

    fn shape_h(&self, x: f64) -> f64 {
        match self.shape {
            StretchShape::Boxcar { s0, s1, height } => {
                if x >= s0 && x <= s1 {
                    height
                } else {
                    0.0
                }
            }
            StretchShape::GridBump { t, beta } => {
                if x <= 0.0 || x >= t {
                    0.0
                } else {
                    (ramp_derivative(x / beta) * ramp((t - x) / beta)
                        - ramp(x / beta) * ramp_derivative((t - x) / beta))
                        / beta
                }
            }
        }
    }

    fn shape_jh(&self, x: f64) -> f64 {
        match self.shape {
            StretchShape::Boxcar { s0, s1, height } => {
                height * ((x.min(s1) - s0).max(0.0)).min(s1 - s0)
            }
            StretchShape::GridBump { t, beta } => {
                if x <= 0.0 || x >= t {
                    0.0
                } else {
                    ramp(x / beta) * ramp((t - x) / beta)
                }
            }
        }
    }
}

/// `C^∞` ramp: 0 for y ≤ 0, 1 for y ≥ 1, `f(y)/(f(y)+f(1−y))` in between
/// with `f(y) = e^{-1/y}`.
fn ramp(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y >= 1.0 {
        1.0
    } else {
        let f = (-1.0 / y).exp();
        let g = (-1.0 / (1.0 - y)).exp();
        f / (f + g)
    }
}

fn ramp_derivative(y: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        0.0
    } else {
        let f = (-1.0 / y).exp();
        let g = (-1.0 / (1.0 - y)).exp();
        let fp = f / (y * y);
        let gp = g / ((1.0 - y) * (1.0 - y)); // g' = −d/dy f(1−y) sign folded below
        (fp * g + f * gp) / ((f + g) * (f + g))
    }
}

/// `T_{t_s·h} x`: time-1 value of `z' = t_s·Jh(z)`, `z(0) = x`.
///
/// Boxcars are solved in closed form (the flow is piecewise
/// linear/exponential); grid bumps use fixed-step RK4 with step
/// [`MAP_STEP`].  Monotone in `x` for every fixed `t_s`.
pub fn time_stretch_map(stretch: &TimeStretch, t_s: f64, x: f64) -> f64 {
    let v = t_s * stretch.amplitude;
    if v == 0.0 {
        return x;
    }
    match stretch.shape {
        StretchShape::Boxcar { s0, s1, height } => boxcar_map(s0, s1, height, v, x),
        StretchShape::GridBump { .. } => {
            if stretch.shape_jh(x) == 0.0 {
                return x; // outside (0,t): fixed point
            }
            let mut z = x;
            let n = (1.0 / MAP_STEP).round() as usize;
            let hstep = 1.0 / n as f64;
            for _ in 0..n {
                let k1 = v * stretch.shape_jh(z);
                let k2 = v * stretch.shape_jh(z + 0.5 * hstep * k1);
                let k3 = v * stretch.shape_jh(z + 0.5 * hstep * k2);
                let k4 = v * stretch.shape_jh(z + hstep * k3);
                z += hstep / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            z
        }
    }
}

/// Closed-form flow of `z' = v·height·clamp(z−s0, 0, s1−s0)` over unit time.
fn boxcar_map(s0: f64, s1: f64, height: f64, v: f64, x: f64) -> f64 {
    let c = v * height; // signed exponential rate inside (s0, s1)
    let l = s1 - s0;
    if x <= s0 {
        return x;
    }
    if v > 0.0 {
        if x < s1 {
            // Exponential until the orbit exits at s1, then linear.
            let s_exit = (l / (x - s0)).ln() / c;
            if s_exit >= 1.0 {
                s0 + (x - s0) * c.exp()
            } else {
                s1 + c * l * (1.0 - s_exit)
            }
        } else {
            x + c * l
        }
    } else {
        // v < 0: linear leftwards while above s1, then exponential decay
        // towards s0 (never reaching it).
        if x > s1 {
            let s_enter = (x - s1) / (-c * l);
            if s_enter >= 1.0 {
                x + c * l
            } else {
                s0 + l * (c * (1.0 - s_enter)).exp()
            }
        } else {
            s0 + (x - s0) * c.exp()
        }
    }
}

/// `r_h(t) = d/dt T_h t = ∫_0^1 h(T_{s·h} t) ds`.
///
/// Boxcars evaluate in closed form; grid bumps integrate the augmented flow
/// `(z' = Jh(z), I' = h(z))`, which computes the same integral along the
/// orbit without quadrature across the orbit's kinks.  `e^{r_h(x)}` is the
/// Jacobian of the map: `(T_h)'(x) = exp(r_h(x))`.
pub fn stretch_rate(stretch: &TimeStretch, t: f64) -> f64 {
    scaled_stretch_rate(stretch, 1.0, t)
}

/// `r_{t_s·h}(t)` (rate of the map with an extra time factor).
pub fn scaled_stretch_rate(stretch: &TimeStretch, t_s: f64, t: f64) -> f64 {
    let v = t_s * stretch.amplitude;
    if v == 0.0 {
        return 0.0;
    }
    match stretch.shape {
        StretchShape::Boxcar { s0, s1, height } => {
            let c = v * height;
            let l = s1 - s0;
            if t <= s0 {
                0.0
            } else if c > 0.0 {
                if t >= s1 {
                    0.0
                } else {
                    // c while the orbit stays in (s0,s1), exits at s_exit.
                    c.min((l / (t - s0)).ln())
                }
            } else if t >= s1 {
                // Orbit re-enters (s0,s1) at s_enter and stays.
                let s_enter = (t - s1) / (-c * l);
                if s_enter >= 1.0 {
                    0.0
                } else {
                    c * (1.0 - s_enter)
                }
            } else {
                c
            }
        }
        StretchShape::GridBump { .. } => {
            if stretch.shape_jh(t) == 0.0 {
                return 0.0;
            }
            let mut z = t;
            let mut integral = 0.0;
            let n = (1.0 / MAP_STEP).round() as usize;
            let hstep = 1.0 / n as f64;
            for _ in 0..n {
                let f = |state: (f64, f64)| (v * stretch.shape_jh(state.0), v * stretch.shape_h(state.0));
                let s1k = f((z, integral));
                let s2k = f((z + 0.5 * hstep * s1k.0, 0.0));
                let s3k = f((z + 0.5 * hstep * s2k.0, 0.0));
                let s4k = f((z + hstep * s3k.0, 0.0));
                z += hstep / 6.0 * (s1k.0 + 2.0 * s2k.0 + 2.0 * s3k.0 + s4k.0);
                integral += hstep / 6.0 * (s1k.1 + 2.0 * s2k.1 + 2.0 * s3k.1 + s4k.1);
            }
            integral
        }
    }
}

/// Transform a configuration: events with marks in `Γ` get their moment of
/// jump moved `τ ↦ T_{−scale·h} τ`; other events are untouched.  Events are
/// re-sorted and the window is widened if the flow pushed any time past it.
pub fn transform_configuration(
    config: &PointConfiguration,
    stretch: &TimeStretch,
    in_gamma: impl Fn(&PointEvent) -> bool,
    scale: f64,
) -> PointConfiguration {
    let mut events: Vec<PointEvent> = config
        .events
        .iter()
        .map(|event| {
            if scale != 0.0 && in_gamma(event) {
                PointEvent {
                    time: time_stretch_map(stretch, -scale, event.time),
                    mark: event.mark.clone(),
                }
            } else {
                event.clone()
            }
        })
        .collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    // Exact ties can only arise from floating-point collapse; nudge apart.
    for i in 1..events.len() {
        if events[i].time <= events[i - 1].time {
            events[i].time = events[i - 1].time.next_up();
        }
    }
    let mut window = config.window;
    if let Some(last) = events.last() {
        window.1 = window.1.max(last.time.next_up());
    }
    if let Some(first) = events.first() {
        window.0 = window.0.min(first.time);
    }
    PointConfiguration {
        window,
        events,
        eps_cut: config.eps_cut,
        rng_seed: config.rng_seed,
    }
}

/// Admissibility density of the transform `T_h^Γ` with respect to the law
/// of the configuration:
///
/// ```text
/// p_h^Γ = exp{ Σ_{events with u ∈ Γ} r_h(τ)  −  c_∞ · Π(Γ) }
/// ```
///
/// `gamma_mass = Π(Γ)` comes from the scenario's measure (the intensity of
/// Γ-marked events per unit time).  For grid-compatible stretches `c_∞ = 0`.
pub fn admissibility_density(
    config: &PointConfiguration,
    stretch: &TimeStretch,
    in_gamma: impl Fn(&PointEvent) -> bool,
    gamma_mass: f64,
) -> f64 {
    let mut log_p = -stretch.c_infinity() * gamma_mass;
    for event in &config.events {
        if in_gamma(event) {
            log_p += stretch_rate(stretch, event.time);
        }
    }
    log_p.exp()
}

/// One-sided vs central finite differences in the stretch direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdMode {
    /// `(f(T_{εh}ν) − f(ν)) / ε` — the defining quotient; first order.
    OneSided,
    /// `(f(T_{εh}ν) − f(T_{−εh}ν)) / 2ε` — second order.
    Central,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub mode: FdMode,
    /// `(ε, difference quotient)` per requested step.
    pub estimates: Vec<(f64, DVector<f64>)>,
    /// Best estimate (Richardson-extrapolated from the two finest steps).
    pub derivative: DVector<f64>,
    /// Observed convergence order from successive differences.
    pub richardson_slope: f64,
}

/// Differentiate a configuration functional along a stretch direction:
/// difference quotients of `f` under `T_{εh}^Γ` across `eps_list`, with a
/// Richardson convergence-order report.
///
/// `eps_list` must be strictly decreasing (default `{1e-2, 1e-3, 1e-4}`).
pub fn finite_diff_derivative(
    f: impl Fn(&PointConfiguration) -> DVector<f64>,
    config: &PointConfiguration,
    stretch: &TimeStretch,
    in_gamma: impl Fn(&PointEvent) -> bool + Copy,
    eps_list: &[f64],
    mode: FdMode,
) -> Result<FdReport, VariationError> {
    if eps_list.len() < 3 || eps_list.windows(2).any(|w| w[0] <= w[1]) || eps_list.iter().any(|&e| e <= 0.0) {
        return Err(VariationError::InvalidParams(
            "eps_list must be ≥ 3 strictly decreasing positive steps".into(),
        ));
    }
    let base = f(config);
    let mut estimates = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let plus = f(&transform_configuration(config, stretch, in_gamma, eps));
        let quotient = match mode {
            FdMode::OneSided => (plus - &base) / eps,
            FdMode::Central => {
                let minus = f(&transform_configuration(config, stretch, in_gamma, -eps));
                (plus - minus) / (2.0 * eps)
            }
        };
        estimates.push((eps, quotient));
    }
    // Convergence order from successive differences: for error C·ε^p the
    // difference ‖est(ε_k) − est(ε_{k+1})‖ scales like ε_k^p.
    let n = estimates.len();
    let d_coarse = (&estimates[n - 3].1 - &estimates[n - 2].1).norm();
    let d_fine = (&estimates[n - 2].1 - &estimates[n - 1].1).norm();
    let ratio_eps = estimates[n - 3].0 / estimates[n - 2].0;
    // Quotient differences below this are floating-point noise, not signal
    // (the map itself carries ~1e-14 error, amplified by 1/ε).
    let noise_floor = 1e-7 * estimates[n - 1].1.norm().max(1.0);
    let ideal = match mode {
        FdMode::OneSided => 1.0,
        FdMode::Central => 2.0,
    };
    let slope = if d_fine <= noise_floor && d_coarse <= noise_floor {
        // Converged to machine precision (e.g. f exactly linear in ε).
        ideal
    } else {
        (d_coarse / d_fine).ln() / ratio_eps.ln()
    };
    if d_fine > d_coarse.max(noise_floor) * (1.0 + 1e-9) {
        return Err(VariationError::NonConvergent(format!(
            "difference quotients diverge as ε shrinks ({d_coarse:.3e} then {d_fine:.3e})"
        )));
    }
    // First-order Richardson extrapolation from the two finest steps.
    let (eps_prev, est_prev) = &estimates[n - 2];
    let (eps_last, est_last) = &estimates[n - 1];
    let r = eps_prev / eps_last;
    let derivative = match mode {
        FdMode::OneSided => (est_last * r - est_prev) / (r - 1.0),
        FdMode::Central => (est_last * (r * r) - est_prev) / (r * r - 1.0),
    };
    Ok(FdReport {
        mode,
        estimates,
        derivative,
        richardson_slope: slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_measure::LevyMeasure;
    use crate::point_measure_sim::sample_configuration;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// Independent fine-step midpoint oracle for the boxcar flow.
    fn boxcar_ode_oracle(s0: f64, s1: f64, height: f64, v: f64, x: f64, steps: usize) -> f64 {
        let jh = |z: f64| height * ((z.min(s1) - s0).max(0.0));
        let dt = 1.0 / steps as f64;
        let mut z = x;
        for _ in 0..steps {
            let k1 = v * jh(z);
            let k2 = v * jh(z + 0.5 * dt * k1);
            let k3 = v * jh(z + 0.5 * dt * k2);
            let k4 = v * jh(z + dt * k3);
            z += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        z
    }

    fn unit_boxcar() -> TimeStretch {
        TimeStretch::boxcar(0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn map_fixes_points_outside_support() {
        let bump = TimeStretch::grid_bump(1.0, 0.1).unwrap();
        for x in [-0.5, 0.0, 1.0, 2.5] {
            assert_eq!(time_stretch_map(&bump, 1.0, x), x);
        }
        let b = TimeStretch::boxcar(0.5, 1.0, 2.0).unwrap();
        assert_eq!(time_stretch_map(&b, 1.0, 0.25), 0.25);
    }

    #[test]
    fn boxcar_map_matches_piecewise_oracle() {
        let b = unit_boxcar();
        // Forward from 0.5: exponential to 1 at s = ln 2, then linear.
        let forward = time_stretch_map(&b, 1.0, 0.5);
        assert_relative_eq!(forward, 2.0 - std::f64::consts::LN_2, max_relative = 1e-12);
        assert_relative_eq!(
            forward,
            boxcar_ode_oracle(0.0, 1.0, 1.0, 1.0, 0.5, 200_000),
            max_relative = 1e-9
        );
        // Backward from 0.5: pure exponential decay, 0.5/e.
        let backward = time_stretch_map(&b, -1.0, 0.5);
        assert_relative_eq!(backward, 0.5 / std::f64::consts::E, max_relative = 1e-12);
        assert_relative_eq!(
            backward,
            boxcar_ode_oracle(0.0, 1.0, 1.0, -1.0, 0.5, 200_000),
            max_relative = 1e-9
        );
        // Backward from beyond the plateau: linear then exponential.
        let far = time_stretch_map(&b, -1.0, 1.5);
        assert_relative_eq!(
            far,
            boxcar_ode_oracle(0.0, 1.0, 1.0, -1.0, 1.5, 200_000),
            max_relative = 1e-9
        );
    }

    #[test]
    fn group_law_and_inverse() {
        let mut rng = crate::rng::stream(3, "stretch-group", 0);
        for stretch in [unit_boxcar(), TimeStretch::grid_bump(1.0, 0.1).unwrap()] {
            for _ in 0..25 {
                let x = rng.gen_range(0.01..1.4);
                let whole = time_stretch_map(&stretch, 1.0, x);
                let split = time_stretch_map(&stretch, 0.3, time_stretch_map(&stretch, 0.7, x));
                assert!((whole - split).abs() < 1e-6, "x = {x}: {whole} vs {split}");
                let back = time_stretch_map(&stretch, -1.0, whole);
                assert!((back - x).abs() < 1e-6, "inverse at {x}: {back}");
            }
        }
    }

    #[test]
    fn map_is_monotone() {
        let bump = TimeStretch::grid_bump(1.0, 0.1).unwrap();
        for t_s in [1.0, -1.0, 0.35] {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..200 {
                let x = k as f64 / 200.0;
                let y = time_stretch_map(&bump, t_s, x);
                assert!(y > prev, "t_s = {t_s}, x = {x}");
                prev = y;
            }
        }
    }

    #[test]
    fn grid_bump_preserves_its_interval() {
        let bump = TimeStretch::grid_bump(1.0, 0.1).unwrap();
        assert!(bump.grid_compatible());
        assert!(!unit_boxcar().grid_compatible());
        for t_s in [1.0, -1.0] {
            assert_eq!(time_stretch_map(&bump, t_s, 0.0), 0.0);
            assert_eq!(time_stretch_map(&bump, t_s, 1.0), 1.0);
            for k in 1..20 {
                let x = k as f64 / 20.0;
                let y = time_stretch_map(&bump, t_s, x);
                assert!(y > 0.0 && y < 1.0, "t_s = {t_s}: {x} -> {y}");
            }
        }
    }

    #[test]
    fn rate_examples() {
        let b = unit_boxcar();
        // Outside the support the orbit never meets h.
        assert_eq!(stretch_rate(&b, 1.5), 0.0);
        assert_eq!(stretch_rate(&b, -0.2), 0.0);
        // t = 0.5: the orbit leaves [0,1] at s = ln 2.
        assert_relative_eq!(stretch_rate(&b, 0.5), std::f64::consts::LN_2, max_relative = 1e-12);
        // Constant h over the whole orbit: rate = the constant.
        let wide = TimeStretch::boxcar(0.0, 10.0, 0.7).unwrap();
        assert_relative_eq!(stretch_rate(&wide, 2.0), 0.7, max_relative = 1e-12);
    }

    #[test]
    fn rate_is_log_jacobian_of_map() {
        let fd = |stretch: &TimeStretch, x: f64| {
            let d = 1e-6;
            (time_stretch_map(stretch, 1.0, x + d) - time_stretch_map(stretch, 1.0, x - d))
                / (2.0 * d)
        };
        let b = unit_boxcar();
        for x in [0.2, 0.5, 0.9] {
            assert_relative_eq!(fd(&b, x), stretch_rate(&b, x).exp(), max_relative = 1e-5);
        }
        let bump = TimeStretch::grid_bump(1.0, 0.1).unwrap();
        for x in [0.15, 0.5, 0.82] {
            assert_relative_eq!(fd(&bump, x), stretch_rate(&bump, x).exp(), max_relative = 1e-5);
        }
    }

    fn one_event_config(time: f64) -> PointConfiguration {
        PointConfiguration {
            window: (0.0, 2.0),
            events: vec![PointEvent {
                time,
                mark: DVector::from_vec(vec![1.0]),
            }],
            eps_cut: 0.5,
            rng_seed: 0,
        }
    }

    #[test]
    fn transform_examples() {
        let config = one_event_config(0.5);
        let b = unit_boxcar();
        // scale = 0 and empty Γ are identities.
        let same = transform_configuration(&config, &b, |_| true, 0.0);
        assert_eq!(same.events[0].time, 0.5);
        let same = transform_configuration(&config, &b, |_| false, 1.0);
        assert_eq!(same.events[0].time, 0.5);
        // One Γ event: τ ↦ T_{−h}(0.5) = 0.5/e.
        let moved = transform_configuration(&config, &b, |_| true, 1.0);
        assert_relative_eq!(moved.events[0].time, 0.5 / std::f64::consts::E, max_relative = 1e-12);
    }

    #[test]
    fn admissibility_trivial_cases() {
        let config = one_event_config(0.5);
        let b = unit_boxcar().scaled(0.0);
        assert_eq!(admissibility_density(&config, &b, |_| true, 1.0), 1.0);
        // Grid bump (c_∞ = 0) with no Γ events.
        let bump = TimeStretch::grid_bump(1.0, 0.1).unwrap();
        assert_eq!(admissibility_density(&config, &bump, |_| false, 1.0), 1.0);
    }

    #[test]
    fn admissibility_monte_carlo_identity() {
        // Lemma-style change of variables: E[φ(T_h^Γ ν)] = E[p_h^Γ φ(ν)]
        // for the unit boxcar and Π = δ_1 (unit intensity), window [0, 3].
        // Three functionals plus E[p] = 1, each within 4 standard errors.
        // The identity lives on the unbounded time axis while the simulation
        // truncates at 3, so each functional's threshold sits at or below
        // T_{−h}(3) = 2 — the region where the windowed transform agrees
        // with the unbounded one.  Functionals of the whole window need an
        // extended sampling window instead.
        let pi = LevyMeasure::single_atom(DVector::from_vec(vec![1.0]), 1.0).unwrap();
        let b = unit_boxcar();
        let gamma_mass = 1.0;
        let phis: [Box<dyn Fn(&PointConfiguration) -> f64>; 3] = [
            Box::new(|c| c.events.iter().filter(|e| e.time <= 0.8).count() as f64),
            Box::new(|c| (-(c.events.iter().filter(|e| e.time <= 2.0).count() as f64)).exp()),
            Box::new(|c| c.events.iter().filter(|e| e.time <= 1.0).map(|e| e.time * e.time).sum()),
        ];
        let n = 100_000;
        let mut lhs = vec![0.0f64; 3];
        let mut rhs = vec![0.0f64; 3];
        let mut rhs_sq = vec![0.0f64; 3];
        let mut lhs_sq = vec![0.0f64; 3];
        let mut p_sum = 0.0;
        let mut p_sq = 0.0;
        for replica in 0..n {
            let config = sample_configuration(&pi, (0.0, 3.0), 0.5, replica, None).unwrap();
            let transformed = transform_configuration(&config, &b, |_| true, 1.0);
            let p = admissibility_density(&config, &b, |_| true, gamma_mass);
            p_sum += p;
            p_sq += p * p;
            for (k, phi) in phis.iter().enumerate() {
                let l = phi(&transformed);
                let r = p * phi(&config);
                lhs[k] += l;
                rhs[k] += r;
                lhs_sq[k] += l * l;
                rhs_sq[k] += r * r;
            }
        }
        let nf = n as f64;
        let p_mean = p_sum / nf;
        let p_se = ((p_sq / nf - p_mean * p_mean) / nf).sqrt();
        assert!((p_mean - 1.0).abs() < 4.0 * p_se, "E[p] = {p_mean} ± {p_se}");
        for k in 0..3 {
            let lm = lhs[k] / nf;
            let rm = rhs[k] / nf;
            let lv = lhs_sq[k] / nf - lm * lm;
            let rv = rhs_sq[k] / nf - rm * rm;
            let se = ((lv + rv) / nf).sqrt();
            assert!(
                (lm - rm).abs() < 4.0 * se,
                "functional {k}: {lm} vs {rm} (4se = {})",
                4.0 * se
            );
        }
    }

    #[test]
    fn fd_derivative_of_first_jump_time() {
        // f = first jump time; on the grid-bump plateau Jh(τ) = 1, so the
        // stretch derivative is −Jh(τ) = −1 (the flow is exactly linear
        // there, so the quotients hit it at every step).
        let config = one_event_config(0.5);
        let bump = TimeStretch::grid_bump(1.0, 0.1).unwrap();
        let f = |c: &PointConfiguration| DVector::from_vec(vec![c.events[0].time]);
        let report = finite_diff_derivative(
            f,
            &config,
            &bump,
            |_| true,
            &[1e-2, 1e-3, 1e-4],
            FdMode::OneSided,
        )
        .unwrap();
        assert_relative_eq!(report.derivative[0], -1.0, max_relative = 1e-4);
        assert!(
            (report.richardson_slope - 1.0).abs() < 0.2,
            "slope = {}",
            report.richardson_slope
        );
        // Central differences converge at second order on the same data.
        let report = finite_diff_derivative(
            f,
            &config,
            &bump,
            |_| true,
            &[1e-2, 1e-3, 1e-4],
            FdMode::Central,
        )
        .unwrap();
        assert_relative_eq!(report.derivative[0], -1.0, max_relative = 1e-6);
    }

    #[test]
    fn fd_slope_detects_first_order_error() {
        // Boxcar at τ = 0.5: T_{−εh}(0.5) = 0.5 e^{−ε}, so the one-sided
        // quotient is −0.5(1−e^{−ε})/ε = −Jh(0.5)·(1 − ε/2 + …); a genuine
        // O(ε) error term that the Richardson slope must measure as ≈ 1,
        // and the extrapolated value must land on −Jh(0.5) = −0.5.
        let config = one_event_config(0.5);
        let b = unit_boxcar();
        let report = finite_diff_derivative(
            |c: &PointConfiguration| DVector::from_vec(vec![c.events[0].time]),
            &config,
            &b,
            |_| true,
            &[1e-2, 1e-3, 1e-4],
            FdMode::OneSided,
        )
        .unwrap();
        assert!(
            (report.richardson_slope - 1.0).abs() < 0.05,
            "slope = {}",
            report.richardson_slope
        );
        assert_relative_eq!(report.derivative[0], -0.5, max_relative = 1e-6);
        // The raw coarsest quotient is visibly off; extrapolation fixed it.
        assert!((report.estimates[0].1[0] + 0.5).abs() > 1e-3);
    }

    #[test]
    fn fd_derivative_of_constant_is_zero() {
        let config = one_event_config(0.5);
        let bump = TimeStretch::grid_bump(1.0, 0.1).unwrap();
        let report = finite_diff_derivative(
            |_| DVector::from_vec(vec![42.0]),
            &config,
            &bump,
            |_| true,
            &[1e-2, 1e-3, 1e-4],
            FdMode::OneSided,
        )
        .unwrap();
        assert_eq!(report.derivative[0], 0.0);
    }

    #[test]
    fn fd_derivative_rejects_wild_functionals() {
        // A functional that jumps discontinuously in ε cannot converge.
        let config = one_event_config(0.5);
        let bump = TimeStretch::grid_bump(1.0, 0.1).unwrap();
        let result = finite_diff_derivative(
            |c| DVector::from_vec(vec![if c.events[0].time < 0.499995 { 1.0 } else { 0.0 }]),
            &config,
            &bump,
            |_| true,
            &[1e-2, 1e-3, 1e-4],
            FdMode::OneSided,
        );
        assert!(matches!(result, Err(VariationError::NonConvergent(_))));
    }
}
