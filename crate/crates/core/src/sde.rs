//! Jump-SDE solving: paths, the stochastic exponent, derivative processes
//! and Malliavin matrices over a differential grid, and stationary samples.
//!
//! The state equation between jumps is the ODE `x' = a(x) − M^ε` (the
//! compensator of the retained medium jumps acts as a constant drift
//! correction); at every event time the mark is added to the state exactly.
//! Everything runs on classical fixed-step RK4 — jump times are spliced
//! into the step grid, so no event-location search is ever needed.  The
//! small-jump Gaussian substitute of the cutoff scheme applies only to
//! direct noise-path evaluation, not here: the solver's driving noise is
//! the retained jumps plus the compensator drift.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::drift::{delta, dissipativity_check, DriftError, DriftField};
use crate::levy_measure::LevyMeasure;
use crate::point_measure_sim::{
    sample_configuration, CutoffScheme, PointConfiguration, PointEvent, SimError,
};
use crate::rng::stream;
use crate::variations::{CellId, DifferentialGrid, TimeStretch};

/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// A state norm beyond this is treated as numerical blow-up.
pub const BLOWUP_NORM: f64 = 1e12;
/// Maximum admissible defect `‖ℰ·ℰ^{-1} − I‖` of the exponent track.
pub const EXPONENT_DEFECT_TOL: f64 = 1e-6;
/// Smallest eigenvalue above which a Malliavin matrix counts as
/// non-degenerate.
pub const NONDEGENERACY_FLOOR: f64 = 1e-10;
/// Burn-in heuristic: `T_b = 20/γ` makes the contraction factor `e^{-γT_b}`
/// about `1e-9`.
pub const BURN_IN_CONTRACTION: f64 = 20.0;
/// Node-count guard for stored paths.
const MAX_NODES: usize = 4_000_000;
/// Relative slack when asserting the exponent bounds (they can be exactly
/// tight, e.g. constant-gradient drifts).
const BOUND_SLACK: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("state norm {norm:.3e} exceeded 1e12 at t = {time}")]
    BlowUp { time: f64, norm: f64 },
    #[error("exponent defect {defect:.3e} exceeds tolerance {tolerance:.0e}")]
    IllConditioned { defect: f64, tolerance: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("stochastic exponent has not been computed for this path")]
    ExponentMissing,
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One applied jump on a solved path.
#[derive(Debug, Clone)]
pub struct JumpMarker {
    /// Node index in the path's time grid (the node time equals the event
    /// time exactly).
    pub node: usize,
    /// Index of the event in the originating configuration.
    pub event: usize,
    pub time: f64,
    /// State immediately before the jump.
    pub before: DVector<f64>,
    /// State immediately after: `before + mark`, exactly.
    pub after: DVector<f64>,
    pub mark: DVector<f64>,
    /// `Δ(X(τ−), u) = a(X(τ−)+u) − a(X(τ−))` evaluated at solve time.
    pub delta: DVector<f64>,
    /// The event's auxiliary grid coordinate.
    pub aux: f64,
}

/// Exponent snapshots along a path: `ℰ_{t_k}` and its inverse, obtained by
/// integrating the forward and adjoint linearisations (never by numerical
/// inversion).
#[derive(Debug, Clone)]
pub struct ExponentTrack {
    pub exponents: Vec<DMatrix<f64>>,
    pub inverses: Vec<DMatrix<f64>>,
    pub report: ExponentReport,
}

/// Summary of an exponent computation, including the growth bounds
/// `det ℰ_T ≥ e^{-mTC(a)}` and `‖ℰ‖, ‖ℰ^{-1}‖ ∈ [e^{-TC(a)}, e^{TC(a)}]`
/// with `C(a)` the largest gradient norm seen along the path.
#[derive(Debug, Clone, Copy)]
pub struct ExponentReport {
    /// `C(a) = sup ‖∇a(X(s))‖` (spectral norm over visited states).
    pub c_a: f64,
    /// Largest `‖ℰ_{t_k}·ℰ_{t_k}^{-1} − I‖` over the grid.
    pub max_defect: f64,
    pub det_final: f64,
    pub det_lower_bound: f64,
    pub norm_lower: f64,
    pub norm_upper: f64,
    /// `det ℰ > 0` at every node.
    pub det_positive: bool,
    /// All growth bounds hold (up to relative slack `1e-8`).
    pub bounds_ok: bool,
}

/// A solved path: time grid (base steps plus exact jump nodes), states,
/// jump registry, and — once computed — the exponent track.
#[derive(Debug, Clone)]
pub struct PathRecord {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    jumps: Vec<JumpMarker>,
    step: f64,
    window: (f64, f64),
    compensator: DVector<f64>,
    exponent: Option<ExponentTrack>,
}

impl PathRecord {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn jumps(&self) -> &[JumpMarker] {
        &self.jumps
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("paths have at least one node")
    }

    /// Exponent snapshots, if [`stochastic_exponent`] has run.
    pub fn exponent_track(&self) -> Option<&ExponentTrack> {
        self.exponent.as_ref()
    }

    /// CSV export: `t, x1..xm, jump` with `jump = 1` on jump nodes.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let m = self.dim();
        let mut header = String::from("t");
        for i in 1..=m {
            header.push_str(&format!(",x{i}"));
        }
        header.push_str(",jump");
        writeln!(out, "{header}")?;
        let mut jump_nodes = vec![false; self.times.len()];
        for marker in &self.jumps {
            jump_nodes[marker.node] = true;
        }
        for (k, t) in self.times.iter().enumerate() {
            let mut row = format!("{t}");
            for v in self.states[k].iter() {
                row.push_str(&format!(",{v}"));
            }
            row.push_str(if jump_nodes[k] { ",1" } else { ",0" });
            writeln!(out, "{row}")?;
        }
        Ok(())
    }
}

fn validate_inputs(
    a: &DriftField,
    config: &PointConfiguration,
    scheme: &CutoffScheme,
    x0: &DVector<f64>,
    step: f64,
) -> Result<(), SdeError> {
    let m = a.dim();
    if x0.len() != m {
        return Err(SdeError::DimensionMismatch(format!(
            "drift dimension {m} vs initial state {}",
            x0.len()
        )));
    }
    if scheme.compensator.len() != m {
        return Err(SdeError::DimensionMismatch(format!(
            "drift dimension {m} vs compensator {}",
            scheme.compensator.len()
        )));
    }
    if let Some(event) = config.events.iter().find(|e| e.mark.len() != m) {
        return Err(SdeError::DimensionMismatch(format!(
            "drift dimension {m} vs event mark {}",
            event.mark.len()
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(SdeError::InvalidParameter(format!(
            "step must be positive and finite, got {step}"
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(SdeError::InvalidParameter(
            "initial state must be finite".into(),
        ));
    }
    if scheme.eps_cut != config.eps_cut {
        return Err(SdeError::InvalidParameter(format!(
            "cutoff mismatch: scheme {} vs configuration {}",
            scheme.eps_cut, config.eps_cut
        )));
    }
    Ok(())
}

/// One classical RK4 step of `x' = b(x)` over `h`.
fn rk4_step(b: &impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = b(x);
    let k2 = b(&(x + &k1 * (h / 2.0)));
    let k3 = b(&(x + &k2 * (h / 2.0)));
    let k4 = b(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn check_norm(x: &DVector<f64>, time: f64) -> Result<(), SdeError> {
    let norm = x.norm();
    if !norm.is_finite() || norm > BLOWUP_NORM {
        return Err(SdeError::BlowUp { time, norm });
    }
    Ok(())
}

fn spectral_norm(mat: &DMatrix<f64>) -> f64 {
    mat.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |acc, s| acc.max(*s))
}

/// Solve the jump SDE over the configuration's window from `x0`.
///
/// Base nodes are uniform with spacing `≤ step`; every event time becomes
/// an exact node, and at that node `X(τ) = X(τ−) + u` exactly.
pub fn solve_path(
    a: &DriftField,
    config: &PointConfiguration,
    scheme: &CutoffScheme,
    x0: &DVector<f64>,
    step: f64,
) -> Result<PathRecord, SdeError> {
    validate_inputs(a, config, scheme, x0, step)?;
    let (t0, t1) = config.window;
    let n_steps = (((t1 - t0) / step).ceil() as usize).max(1);
    if n_steps + config.events.len() > MAX_NODES {
        return Err(SdeError::InvalidParameter(format!(
            "window/step imply more than {MAX_NODES} nodes; widen the step"
        )));
    }
    let dt = (t1 - t0) / n_steps as f64;
    let mut times: Vec<f64> = (0..=n_steps)
        .map(|k| if k == n_steps { t1 } else { t0 + k as f64 * dt })
        .collect();
    for event in &config.events {
        debug_assert!(event.time >= t0 && event.time <= t1);
        if event.time >= t0 && event.time <= t1 {
            times.push(event.time);
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup();

    let comp = scheme.compensator.clone();
    let b = move |x: &DVector<f64>| {
        let mut v = a.eval(x);
        v -= &comp;
        v
    };

    let mut states = Vec::with_capacity(times.len());
    let mut jumps = Vec::with_capacity(config.events.len());
    let mut x = x0.clone();
    let mut next_event = 0usize;
    for (node, &t) in times.iter().enumerate() {
        if node > 0 {
            let h = t - times[node - 1];
            x = rk4_step(&b, &x, h);
        }
        while next_event < config.events.len() && config.events[next_event].time == t {
            let event = &config.events[next_event];
            let before = x.clone();
            x += &event.mark;
            jumps.push(JumpMarker {
                node,
                event: next_event,
                time: t,
                before: before.clone(),
                after: x.clone(),
                mark: event.mark.clone(),
                delta: delta(a, &before, &event.mark),
                aux: config.aux_coordinate(next_event),
            });
            next_event += 1;
        }
        check_norm(&x, t)?;
        states.push(x.clone());
    }
    Ok(PathRecord {
        times,
        states,
        jumps,
        step,
        window: config.window,
        compensator: scheme.compensator.clone(),
        exponent: None,
    })
}

/// Endpoint-only integration of the same dynamics — no per-node storage, so
/// it scales to long burn-in windows and large replica counts.
pub fn solve_endpoint(
    a: &DriftField,
    config: &PointConfiguration,
    scheme: &CutoffScheme,
    x0: &DVector<f64>,
    step: f64,
) -> Result<DVector<f64>, SdeError> {
    validate_inputs(a, config, scheme, x0, step)?;
    let (t0, t1) = config.window;
    let n_steps = (((t1 - t0) / step).ceil() as usize).max(1);
    let dt = (t1 - t0) / n_steps as f64;
    let comp = scheme.compensator.clone();
    let b = move |x: &DVector<f64>| {
        let mut v = a.eval(x);
        v -= &comp;
        v
    };
    let mut x = x0.clone();
    let mut next_event = 0usize;
    for k in 0..n_steps {
        let t_a = t0 + k as f64 * dt;
        let t_b = if k + 1 == n_steps {
            t1
        } else {
            t0 + (k + 1) as f64 * dt
        };
        let mut cur = t_a;
        while next_event < config.events.len() && config.events[next_event].time <= t_b {
            let tau = config.events[next_event].time;
            if tau > cur {
                x = rk4_step(&b, &x, tau - cur);
                cur = tau;
            }
            x += &config.events[next_event].mark;
            check_norm(&x, tau)?;
            next_event += 1;
        }
        if t_b > cur {
            x = rk4_step(&b, &x, t_b - cur);
        }
        check_norm(&x, t_b)?;
    }
    Ok(x)
}

/// Compute the stochastic exponent `ℰ` and its inverse along a solved path
/// and store the track inside the record.
///
/// `ℰ' = ∇a(X)ℰ` and the adjoint `(ℰ^{-1})' = −ℰ^{-1}∇a(X)` are advanced by
/// matrix RK4 re-using the path's nodes as restart points; `a` must be the
/// drift the path was solved with.  Fails with [`SdeError::IllConditioned`]
/// if the product defect exceeds [`EXPONENT_DEFECT_TOL`].
pub fn stochastic_exponent(
    path: &mut PathRecord,
    a: &DriftField,
) -> Result<ExponentReport, SdeError> {
    let m = path.dim();
    if a.dim() != m {
        return Err(SdeError::DimensionMismatch(format!(
            "drift dimension {} vs path dimension {m}",
            a.dim()
        )));
    }
    let comp = path.compensator.clone();
    let b = |x: &DVector<f64>| {
        let mut v = a.eval(x);
        v -= &comp;
        v
    };
    let identity = DMatrix::<f64>::identity(m, m);
    let n = path.times.len();
    let mut exponents = Vec::with_capacity(n);
    let mut inverses = Vec::with_capacity(n);
    let mut e = identity.clone();
    let mut f = identity.clone();
    let mut c_a = spectral_norm(&a.gradient(&path.states[0]));
    let mut max_defect = 0.0f64;
    let mut det_positive = e.determinant() > 0.0;
    let mut norm_min = spectral_norm(&e);
    let mut norm_max = norm_min;
    exponents.push(e.clone());
    inverses.push(f.clone());
    for k in 1..n {
        let h = path.times[k] - path.times[k - 1];
        // Reconstruct the solver's RK4 stage states on this interval.
        let x1 = path.states[k - 1].clone();
        let f1 = b(&x1);
        let x2 = &x1 + &f1 * (h / 2.0);
        let f2 = b(&x2);
        let x3 = &x1 + &f2 * (h / 2.0);
        let f3 = b(&x3);
        let x4 = &x1 + &f3 * h;
        let j1 = a.gradient(&x1);
        let j2 = a.gradient(&x2);
        let j3 = a.gradient(&x3);
        let j4 = a.gradient(&x4);
        for j in [&j1, &j2, &j3, &j4] {
            c_a = c_a.max(spectral_norm(j));
        }
        let e1 = &j1 * &e;
        let e2 = &j2 * &(&e + &e1 * (h / 2.0));
        let e3 = &j3 * &(&e + &e2 * (h / 2.0));
        let e4 = &j4 * &(&e + &e3 * h);
        e += (e1 + e2 * 2.0 + e3 * 2.0 + e4) * (h / 6.0);
        let g1 = -(&f * &j1);
        let g2 = -(&(&f + &g1 * (h / 2.0)) * &j2);
        let g3 = -(&(&f + &g2 * (h / 2.0)) * &j3);
        let g4 = -(&(&f + &g3 * h) * &j4);
        f += (g1 + g2 * 2.0 + g3 * 2.0 + g4) * (h / 6.0);

        max_defect = max_defect.max((&e * &f - &identity).norm());
        det_positive = det_positive && e.determinant() > 0.0;
        let ne = spectral_norm(&e);
        let nf = spectral_norm(&f);
        norm_min = norm_min.min(ne.min(nf));
        norm_max = norm_max.max(ne.max(nf));
        exponents.push(e.clone());
        inverses.push(f.clone());
    }
    c_a = c_a.max(spectral_norm(&a.gradient(path.final_state())));
    if max_defect > EXPONENT_DEFECT_TOL {
        return Err(SdeError::IllConditioned {
            defect: max_defect,
            tolerance: EXPONENT_DEFECT_TOL,
        });
    }
    let horizon = path.times[n - 1] - path.times[0];
    let det_final = e.determinant();
    let det_lower_bound = (-(m as f64) * horizon * c_a).exp();
    let norm_lower = (-horizon * c_a).exp();
    let norm_upper = (horizon * c_a).exp();
    let bounds_ok = det_positive
        && det_final >= det_lower_bound * (1.0 - BOUND_SLACK)
        && norm_min >= norm_lower * (1.0 - BOUND_SLACK)
        && norm_max <= norm_upper * (1.0 + BOUND_SLACK);
    let report = ExponentReport {
        c_a,
        max_defect,
        det_final,
        det_lower_bound,
        norm_lower,
        norm_upper,
        det_positive,
        bounds_ok,
    };
    path.exponent = Some(ExponentTrack {
        exponents,
        inverses,
        report,
    });
    Ok(report)
}

/// Derivative of the path in the stretch direction `(h, Γ)`, sampled on the
/// path's nodes:
///
/// ```text
/// Y(t) = ℰ_t · Σ_{τ ≤ t, u_τ ∈ Γ} Jh(τ) ℰ_τ^{-1} Δ(X(τ−), u_τ)
/// ```
///
/// Requires the exponent track; `a` must be the drift the path was solved
/// with.
pub fn derivative_process(
    path: &PathRecord,
    a: &DriftField,
    stretch: &TimeStretch,
    in_gamma: impl Fn(&PointEvent) -> bool,
) -> Result<Vec<DVector<f64>>, SdeError> {
    let track = path.exponent.as_ref().ok_or(SdeError::ExponentMissing)?;
    let m = path.dim();
    if a.dim() != m {
        return Err(SdeError::DimensionMismatch(format!(
            "drift dimension {} vs path dimension {m}",
            a.dim()
        )));
    }
    let mut y = Vec::with_capacity(path.times.len());
    let mut running = DVector::<f64>::zeros(m);
    let mut next_jump = 0usize;
    for k in 0..path.times.len() {
        while next_jump < path.jumps.len() && path.jumps[next_jump].node == k {
            let marker = &path.jumps[next_jump];
            let event = PointEvent {
                time: marker.time,
                mark: marker.mark.clone(),
            };
            if in_gamma(&event) {
                let d = delta(a, &marker.before, &marker.mark);
                running += &track.inverses[k] * d * stretch.jh(marker.time);
            }
            next_jump += 1;
        }
        y.push(&track.exponents[k] * &running);
    }
    Ok(y)
}

/// Per-cell derivative vector of the Malliavin matrix.
#[derive(Debug, Clone)]
pub struct CellContribution {
    pub cell: CellId,
    /// `g_i = ℰ_T Σ_{events in cell} Jh_i(τ) ℰ_τ^{-1} Δ(X(τ−), u)`.
    pub g: DVector<f64>,
    /// Number of events that landed in the cell.
    pub events: usize,
}

/// The Malliavin matrix `Σ = Σ_i g_i g_iᵀ` of the path endpoint over a
/// differential grid.
#[derive(Debug, Clone)]
pub struct GridDerivative<'g> {
    pub grid: &'g DifferentialGrid,
    /// Realised cells in deterministic (annulus, sub-index) order.
    pub cells: Vec<CellContribution>,
    pub sigma: DMatrix<f64>,
    pub lambda_min: f64,
    /// `λ_min > 1e-10`.
    pub nondegenerate: bool,
}

/// Assemble the Malliavin matrix of `X(T)` over the grid's cells.
///
/// Each jump is routed to its cell by norm and auxiliary coordinate; jumps
/// outside the grid's radial coverage contribute nothing.  Requires the
/// exponent track.
pub fn malliavin_matrix<'g>(
    path: &PathRecord,
    grid: &'g DifferentialGrid,
) -> Result<GridDerivative<'g>, SdeError> {
    let track = path.exponent.as_ref().ok_or(SdeError::ExponentMissing)?;
    let m = path.dim();
    let mut acc: BTreeMap<CellId, (DVector<f64>, usize)> = BTreeMap::new();
    for marker in &path.jumps {
        let Some(cell) = grid.locate(marker.mark.norm(), marker.aux) else {
            continue;
        };
        let weight = grid.cell_stretch(cell.n).jh(marker.time);
        let contribution = &track.inverses[marker.node] * &marker.delta * weight;
        let entry = acc
            .entry(cell)
            .or_insert_with(|| (DVector::zeros(m), 0usize));
        entry.0 += contribution;
        entry.1 += 1;
    }
    let e_end = track
        .exponents
        .last()
        .expect("exponent track has at least one node");
    let mut sigma = DMatrix::<f64>::zeros(m, m);
    let mut cells = Vec::with_capacity(acc.len());
    for (cell, (partial, events)) in acc {
        let g = e_end * partial;
        sigma += &g * g.transpose();
        cells.push(CellContribution { cell, g, events });
    }
    let lambda_min = sigma
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v));
    Ok(GridDerivative {
        grid,
        cells,
        sigma,
        lambda_min,
        nondegenerate: lambda_min > NONDEGENERACY_FLOOR,
    })
}

/// Endpoint samples approximating the stationary law.
#[derive(Debug, Clone)]
pub struct StationarySample {
    pub samples: Vec<DVector<f64>>,
    pub burn_in: f64,
    pub gamma_estimate: f64,
    /// Whether the dissipativity pre-check held; when it does not, the
    /// samples are still produced but the burn-in heuristic is unfounded.
    pub dissipative: bool,
}

/// Draw `n_samples` independent endpoint samples after a burn-in window,
/// each replica integrating from `x0 = 0` on its own RNG stream.
///
/// `burn_in = None` uses `20/γ` from the dissipativity estimate (falling
/// back to `20` when the estimate is non-positive).
pub fn stationary_sample(
    a: &DriftField,
    measure: &LevyMeasure,
    scheme: &CutoffScheme,
    burn_in: Option<f64>,
    n_samples: usize,
    run_seed: u64,
    step: f64,
) -> Result<StationarySample, SdeError> {
    let m = a.dim();
    if measure.dim() != m {
        return Err(SdeError::DimensionMismatch(format!(
            "drift dimension {m} vs measure dimension {}",
            measure.dim()
        )));
    }
    let diss = dissipativity_check(a, 1.0, 32)?;
    let t_b = burn_in.unwrap_or(if diss.gamma_estimate > 0.0 {
        BURN_IN_CONTRACTION / diss.gamma_estimate
    } else {
        BURN_IN_CONTRACTION
    });
    if !(t_b > 0.0 && t_b.is_finite()) {
        return Err(SdeError::InvalidParameter(format!(
            "burn-in must be positive and finite, got {t_b}"
        )));
    }
    let x0 = DVector::<f64>::zeros(m);
    let samples = (0..n_samples)
        .into_par_iter()
        .map(|replica| {
            let seed = stream(run_seed, "stationary", replica as u64).gen::<u64>();
            let config = sample_configuration(measure, (0.0, t_b), scheme.eps_cut, seed, None)?;
            solve_endpoint(a, &config, scheme, &x0, step)
        })
        .collect::<Result<Vec<_>, SdeError>>()?;
    Ok(StationarySample {
        samples,
        burn_in: t_b,
        gamma_estimate: diss.gamma_estimate,
        dissipative: diss.holds,
    })
}
