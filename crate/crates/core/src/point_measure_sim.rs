//! Exact simulation of the Poisson point measure of jumps above a cutoff.
//!
//! A driving Lévy path is decomposed at a cutoff `ε`:
//!
//! * jumps with `‖u‖ > ε` form a compound-Poisson point configuration with
//!   rate `Π(‖u‖ > ε)` — simulated exactly;
//! * jumps in the shell `ε < ‖u‖ < 1` are compensated by the drift vector
//!   `M^ε = ∫_{ε<‖u‖<1} u Π(du)` (jumps of norm ≥ 1 are *big* jumps and are
//!   never compensated);
//! * jumps below `ε` are dropped by default ([`SmallJumpMode::Drop`]), or
//!   replaced by a moment-matched Brownian substitute
//!   ([`SmallJumpMode::GaussianMatch`]) — the substitute is an experimental
//!   bias-study knob, not part of the cutoff construction itself.
//!
//! Everything is deterministic given `(seed, label, replica)` stream keys;
//! replica generation is embarrassingly parallel.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal, WeightedAliasIndex};
use thiserror::Error;

use crate::levy_measure::{AngularPart, LevyMeasure, MeasureError, MeasureKind};
use crate::rng::stream;

/// Default budget on the expected event count of one configuration.
pub const DEFAULT_EVENT_BUDGET: f64 = 1e7;
/// Number of inverse-CDF knots for radial mark sampling.
const RADIAL_KNOTS: usize = 4096;
/// Resolution of the cumulative table the knots are extracted from.
const RADIAL_CDF_GRID: usize = 16384;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("expected event count {rate:.3e} exceeds the budget {budget:.3e}")]
    RateOverflow { rate: f64, budget: f64 },
    #[error("invalid window [{t0}, {t1})")]
    InvalidWindow { t0: f64, t1: f64 },
    #[error("cutoff must lie in (0,1), got {0}")]
    InvalidCutoff(f64),
    #[error("measure not samplable: {0}")]
    UnsupportedMeasure(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed configuration dump: {0}")]
    Format(String),
}

/// One jump event `(τ, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEvent {
    pub time: f64,
    pub mark: DVector<f64>,
}

/// A realisation of the point measure above the cutoff on a time window.
#[derive(Debug, Clone, PartialEq)]
pub struct PointConfiguration {
    pub window: (f64, f64),
    /// Time-sorted events, times strictly increasing, every `‖u‖ ≥ eps_cut`.
    pub events: Vec<PointEvent>,
    pub eps_cut: f64,
    pub rng_seed: u64,
}

impl PointConfiguration {
    pub fn dim(&self) -> usize {
        self.events.first().map_or(0, |e| e.mark.len())
    }

    /// Auxiliary uniform coordinate attached to an event.
    ///
    /// The configuration lives on the extended mark space `ℝ^m × [0,1)`:
    /// the extra coordinate is what differential grids sub-split cells on.
    /// It is regenerated deterministically from the configuration seed and
    /// the event index, so dumps don't need to store it.
    pub fn aux_coordinate(&self, event_index: usize) -> f64 {
        let mut rng = stream(self.rng_seed, "aux", event_index as u64);
        rng.gen::<f64>()
    }
}

/// What to do with jumps below the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmallJumpMode {
    /// Drop them (the cutoff approximation itself).
    Drop,
    /// Replace them with a Brownian motion matching their covariance
    /// (bias-study substitute; sampled on the evaluation grid).
    GaussianMatch,
}

/// Cutoff bookkeeping shared by path evaluation and SDE solving.
#[derive(Debug, Clone)]
pub struct CutoffScheme {
    pub eps_cut: f64,
    pub small_jump_mode: SmallJumpMode,
    /// `M^ε = ∫_{ε<‖u‖<1} u Π(du)`.
    pub compensator: DVector<f64>,
    /// `∫_{‖u‖≤ε} u uᵀ Π(du)`, kept when the Gaussian substitute is active.
    pub small_jump_cov: Option<DMatrix<f64>>,
}

impl CutoffScheme {
    pub fn drop_mode(measure: &LevyMeasure, eps_cut: f64) -> Result<Self, SimError> {
        Ok(Self {
            eps_cut,
            small_jump_mode: SmallJumpMode::Drop,
            compensator: compensator_drift(measure, eps_cut)?,
            small_jump_cov: None,
        })
    }

    pub fn gaussian_match(measure: &LevyMeasure, eps_cut: f64) -> Result<Self, SimError> {
        Ok(Self {
            eps_cut,
            small_jump_mode: SmallJumpMode::GaussianMatch,
            compensator: compensator_drift(measure, eps_cut)?,
            small_jump_cov: Some(measure.small_jump_covariance(eps_cut)?),
        })
    }
}

/// `M^ε = ∫_{ε<‖u‖<1} u Π(du)` — the compensating drift of the shell between
/// the cutoff and the big-jump boundary.
pub fn compensator_drift(measure: &LevyMeasure, eps_cut: f64) -> Result<DVector<f64>, SimError> {
    if !(eps_cut > 0.0 && eps_cut < 1.0) {
        return Err(SimError::InvalidCutoff(eps_cut));
    }
    Ok(measure.first_moment_shell(eps_cut)?)
}

// ---------------------------------------------------------------------------
// Mark samplers
// ---------------------------------------------------------------------------

/// O(1) sampler for the normalized restriction of Π to `{‖u‖ > ε}`,
/// built once per `(measure, eps_cut)`.
pub enum MarkSampler {
    Empty,
    Atoms {
        locations: Vec<DVector<f64>>,
        table: WeightedAliasIndex<f64>,
    },
    Radial {
        dim: usize,
        /// `knots[j] ≈ F^{-1}(j/(n-1))` of the restricted radial CDF.
        knots: Vec<f64>,
        angular: AngularPart,
    },
    Mixture {
        table: WeightedAliasIndex<f64>,
        components: Vec<MarkSampler>,
    },
}

impl MarkSampler {
    /// Build the sampler; also returns the retained rate `Π(‖u‖ > ε)`.
    pub fn build(measure: &LevyMeasure, eps_cut: f64) -> Result<(Self, f64), SimError> {
        let rate = measure.mass_above(eps_cut)?;
        if rate <= 0.0 {
            return Ok((MarkSampler::Empty, 0.0));
        }
        let sampler = match measure.kind() {
            MeasureKind::Atomic(atoms) => {
                let retained: Vec<_> = atoms
                    .iter()
                    .filter(|a| a.location.norm() > eps_cut)
                    .collect();
                let weights: Vec<f64> = retained.iter().map(|a| a.weight).collect();
                let table = WeightedAliasIndex::new(weights).map_err(|e| {
                    SimError::UnsupportedMeasure(format!("alias table build failed: {e}"))
                })?;
                MarkSampler::Atoms {
                    locations: retained.iter().map(|a| a.location.clone()).collect(),
                    table,
                }
            }
            MeasureKind::Radial(rad) => {
                if !rad.support.1.is_finite() {
                    return Err(SimError::UnsupportedMeasure(
                        "radial sampling needs a finite support cap".into(),
                    ));
                }
                let lo = rad.support.0.max(eps_cut);
                let hi = rad.support.1;
                MarkSampler::Radial {
                    dim: measure.dim(),
                    knots: inverse_cdf_knots(&rad.profile, lo, hi)?,
                    angular: rad.angular.clone(),
                }
            }
            MeasureKind::Mixture(parts) => {
                let mut weights = Vec::with_capacity(parts.len());
                let mut components = Vec::with_capacity(parts.len());
                for (w, part) in parts {
                    let (sampler, part_rate) = MarkSampler::build(part, eps_cut)?;
                    weights.push(w * part_rate);
                    components.push(sampler);
                }
                let table = WeightedAliasIndex::new(weights).map_err(|e| {
                    SimError::UnsupportedMeasure(format!("mixture table build failed: {e}"))
                })?;
                MarkSampler::Mixture { table, components }
            }
        };
        Ok((sampler, rate))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        match self {
            MarkSampler::Empty => unreachable!("sampling from an empty mark distribution"),
            MarkSampler::Atoms { locations, table } => locations[table.sample(rng)].clone(),
            MarkSampler::Radial {
                dim,
                knots,
                angular,
            } => {
                let v: f64 = rng.gen();
                let pos = v * (knots.len() - 1) as f64;
                let k = (pos as usize).min(knots.len() - 2);
                let frac = pos - k as f64;
                let rho = knots[k] + frac * (knots[k + 1] - knots[k]);
                match angular {
                    AngularPart::Signs { plus, .. } => {
                        let sign = if rng.gen::<f64>() < *plus { 1.0 } else { -1.0 };
                        DVector::from_vec(vec![sign * rho])
                    }
                    AngularPart::UniformSphere => {
                        let mut theta =
                            DVector::from_fn(*dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                        let norm = theta.norm();
                        if norm < 1e-12 {
                            theta[0] = 1.0;
                        } else {
                            theta /= norm;
                        }
                        theta * rho
                    }
                }
            }
            MarkSampler::Mixture { table, components } => {
                components[table.sample(rng)].sample(rng)
            }
        }
    }
}

/// Tabulate `F^{-1}(j/(n-1))` for the restricted radial CDF on `[lo, hi]`.
fn inverse_cdf_knots(
    profile: &crate::levy_measure::RadialProfile,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>, SimError> {
    if !(lo > 0.0 && lo < hi) {
        return Err(SimError::UnsupportedMeasure(format!(
            "empty restricted radial support [{lo}, {hi}]"
        )));
    }
    // Cumulative masses on a log-spaced grid (trapezoid on each segment is
    // plenty at this resolution; the knots only steer a Monte Carlo sampler).
    let log_lo = lo.ln();
    let log_hi = hi.ln();
    let mut rho = Vec::with_capacity(RADIAL_CDF_GRID + 1);
    for i in 0..=RADIAL_CDF_GRID {
        rho.push((log_lo + (log_hi - log_lo) * i as f64 / RADIAL_CDF_GRID as f64).exp());
    }
    let values: Vec<f64> = rho.iter().map(|&r| profile.eval(r)).collect();
    let mut cdf = vec![0.0f64; rho.len()];
    for i in 1..rho.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (values[i - 1] + values[i]) * (rho[i] - rho[i - 1]);
    }
    let total = *cdf.last().unwrap();
    if !(total > 0.0 && total.is_finite()) {
        return Err(SimError::UnsupportedMeasure(
            "restricted radial mass is zero or non-finite".into(),
        ));
    }
    let mut knots = Vec::with_capacity(RADIAL_KNOTS);
    let mut seg = 0usize;
    for j in 0..RADIAL_KNOTS {
        let target = total * j as f64 / (RADIAL_KNOTS - 1) as f64;
        while seg + 1 < cdf.len() && cdf[seg + 1] < target {
            seg += 1;
        }
        let span = cdf[seg + 1] - cdf[seg];
        let frac = if span > 0.0 { (target - cdf[seg]) / span } else { 0.0 };
        knots.push(rho[seg] + frac * (rho[seg + 1] - rho[seg]));
    }
    Ok(knots)
}

// ---------------------------------------------------------------------------
// Sampling and path evaluation
// ---------------------------------------------------------------------------

/// Simulate the point configuration of jumps above `eps_cut` on a window.
///
/// Event count is Poisson with rate `Π(‖u‖ > ε)·|window|`, times are i.i.d.
/// uniform (ties resolved by resampling), marks i.i.d. from the normalized
/// restriction of Π.  Deterministic given `(measure, window, eps_cut, seed)`.
pub fn sample_configuration(
    measure: &LevyMeasure,
    window: (f64, f64),
    eps_cut: f64,
    rng_seed: u64,
    budget: Option<f64>,
) -> Result<PointConfiguration, SimError> {
    let (t0, t1) = window;
    if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
        return Err(SimError::InvalidWindow { t0, t1 });
    }
    if !(eps_cut > 0.0 && eps_cut < 1.0) {
        return Err(SimError::InvalidCutoff(eps_cut));
    }
    let (sampler, rate) = MarkSampler::build(measure, eps_cut)?;
    let lambda = rate * (t1 - t0);
    let budget = budget.unwrap_or(DEFAULT_EVENT_BUDGET);
    if lambda > budget {
        return Err(SimError::RateOverflow {
            rate: lambda,
            budget,
        });
    }
    let mut events = Vec::new();
    if lambda > 0.0 {
        let mut time_rng = stream(rng_seed, "events", 0);
        let count = Poisson::new(lambda)
            .expect("positive rate")
            .sample(&mut time_rng) as usize;
        let mut times: Vec<f64> = (0..count)
            .map(|_| time_rng.gen_range(t0..t1))
            .collect();
        loop {
            times.sort_by(f64::total_cmp);
            let tie = times.windows(2).position(|w| w[0] == w[1]);
            match tie {
                None => break,
                Some(i) => times[i] = time_rng.gen_range(t0..t1),
            }
        }
        let mut mark_rng = stream(rng_seed, "marks", 0);
        events = times
            .into_iter()
            .map(|time| PointEvent {
                time,
                mark: sampler.sample(&mut mark_rng),
            })
            .collect();
    }
    Ok(PointConfiguration {
        window,
        events,
        eps_cut,
        rng_seed,
    })
}

/// Evaluate the cutoff Lévy path `U_t = Σ_{τ≤t} u_τ − (t−t0)·M^ε` at sorted
/// times (càdlàg: a jump is included at its own time).  With
/// [`SmallJumpMode::GaussianMatch`] a Brownian substitute with the stored
/// small-jump covariance is added, sampled on the evaluation grid.
pub fn evaluate_levy_path(
    config: &PointConfiguration,
    scheme: &CutoffScheme,
    times: &[f64],
) -> Result<Vec<DVector<f64>>, SimError> {
    let (t0, t1) = config.window;
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(SimError::InvalidWindow { t0, t1 });
    }
    if times.iter().any(|&t| t < t0 || t > t1) {
        return Err(SimError::InvalidWindow { t0, t1 });
    }
    let dim = scheme.compensator.len();
    let gaussian = match scheme.small_jump_mode {
        SmallJumpMode::Drop => None,
        SmallJumpMode::GaussianMatch => {
            let cov = scheme.small_jump_cov.clone().ok_or_else(|| {
                SimError::UnsupportedMeasure(
                    "GaussianMatch scheme lacks the small-jump covariance".into(),
                )
            })?;
            Some(matrix_sqrt_psd(&cov))
        }
    };
    let mut out = Vec::with_capacity(times.len());
    let mut acc = DVector::zeros(dim);
    let mut next_event = 0usize;
    let mut gauss_rng = stream(config.rng_seed, "gauss", 0);
    let mut brownian = DVector::zeros(dim);
    let mut prev_time = t0;
    for &t in times {
        while next_event < config.events.len() && config.events[next_event].time <= t {
            acc += &config.events[next_event].mark;
            next_event += 1;
        }
        let mut value = &acc - &scheme.compensator * (t - t0);
        if let Some(root) = &gaussian {
            let dt = t - prev_time;
            if dt > 0.0 {
                let noise =
                    DVector::from_fn(dim, |_, _| gauss_rng.sample::<f64, _>(StandardNormal));
                brownian += root * noise * dt.sqrt();
            }
            value += &brownian;
        }
        prev_time = t;
        out.push(value);
    }
    Ok(out)
}

/// Symmetric PSD square root via eigendecomposition (eigenvalues clamped
/// at zero to absorb roundoff).
fn matrix_sqrt_psd(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(root);
    }
    &scaled * eig.eigenvectors.transpose()
}

// ---------------------------------------------------------------------------
// Binary dump
// ---------------------------------------------------------------------------

const DUMP_MAGIC: [u8; 4] = *b"LVPC";

/// Write a configuration: header (magic, dim, window, eps_cut, seed, count)
/// followed by packed little-endian f64 records `(τ, u₁…u_m)`.
pub fn dump_configuration(
    config: &PointConfiguration,
    dim: usize,
    writer: &mut impl Write,
) -> Result<(), SimError> {
    writer.write_all(&DUMP_MAGIC)?;
    writer.write_all(&(dim as u32).to_le_bytes())?;
    writer.write_all(&config.window.0.to_le_bytes())?;
    writer.write_all(&config.window.1.to_le_bytes())?;
    writer.write_all(&config.eps_cut.to_le_bytes())?;
    writer.write_all(&config.rng_seed.to_le_bytes())?;
    writer.write_all(&(config.events.len() as u64).to_le_bytes())?;
    for event in &config.events {
        if event.mark.len() != dim {
            return Err(SimError::Format(format!(
                "event mark has dim {}, expected {dim}",
                event.mark.len()
            )));
        }
        writer.write_all(&event.time.to_le_bytes())?;
        for x in event.mark.iter() {
            writer.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read back a configuration written by [`dump_configuration`].
pub fn load_configuration(reader: &mut impl Read) -> Result<PointConfiguration, SimError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != DUMP_MAGIC {
        return Err(SimError::Format("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut f64buf = [0u8; 8];
    let mut u64buf = [0u8; 8];
    reader.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    reader.read_exact(&mut f64buf)?;
    let t0 = f64::from_le_bytes(f64buf);
    reader.read_exact(&mut f64buf)?;
    let t1 = f64::from_le_bytes(f64buf);
    reader.read_exact(&mut f64buf)?;
    let eps_cut = f64::from_le_bytes(f64buf);
    reader.read_exact(&mut u64buf)?;
    let rng_seed = u64::from_le_bytes(u64buf);
    reader.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut events = Vec::with_capacity(count);
    for _ in 0..count {
        reader.read_exact(&mut f64buf)?;
        let time = f64::from_le_bytes(f64buf);
        let mut mark = DVector::zeros(dim);
        for j in 0..dim {
            reader.read_exact(&mut f64buf)?;
            mark[j] = f64::from_le_bytes(f64buf);
        }
        events.push(PointEvent { time, mark });
    }
    Ok(PointConfiguration {
        window: (t0, t1),
        events,
        eps_cut,
        rng_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_measure::DEFAULT_N_MAX;
    use approx::assert_relative_eq;

    fn geometric_e() -> LevyMeasure {
        LevyMeasure::geometric_atoms(std::f64::consts::E, DEFAULT_N_MAX).unwrap()
    }

    fn unit_atom_1d() -> LevyMeasure {
        LevyMeasure::single_atom(DVector::from_vec(vec![1.0]), 1.0).unwrap()
    }

    #[test]
    fn compensator_examples() {
        // Symmetric measure: odd integrand integrates to zero.
        let stable = LevyMeasure::alpha_stable(1, 1.0).unwrap();
        assert_eq!(compensator_drift(&stable, 0.01).unwrap()[0], 0.0);

        // Geometric atoms at ε = e^{-3.5}: atoms e^{-1}, e^{-2}, e^{-3}.
        let want: f64 = (1..=3).map(|n| (-(n as f64)).exp()).sum();
        let got = compensator_drift(&geometric_e(), (-3.5f64).exp()).unwrap();
        assert_relative_eq!(got[0], want, max_relative = 1e-14);

        // Single off-axis atom below the big-jump boundary.
        let atom = LevyMeasure::single_atom(DVector::from_vec(vec![0.5, 0.0]), 1.0).unwrap();
        let got = compensator_drift(&atom, 0.1).unwrap();
        assert_relative_eq!(got[0], 0.5, max_relative = 1e-14);
        assert_eq!(got[1], 0.0);

        // A jump of norm exactly 1 is a big jump: never compensated.
        let boundary = unit_atom_1d();
        assert_eq!(compensator_drift(&boundary, 0.1).unwrap()[0], 0.0);

        assert!(matches!(
            compensator_drift(&boundary, 1.5),
            Err(SimError::InvalidCutoff(_))
        ));
    }

    #[test]
    fn empty_measure_gives_empty_configuration() {
        let config =
            sample_configuration(&LevyMeasure::zero(1), (0.0, 10.0), 0.5, 42, None).unwrap();
        assert!(config.events.is_empty());
    }

    #[test]
    fn event_count_mean_matches_poisson_rate() {
        let pi = unit_atom_1d();
        let mut total = 0usize;
        let n = 10_000;
        for replica in 0..n {
            let config =
                sample_configuration(&pi, (0.0, 10.0), 0.5, 1000 + replica, None).unwrap();
            total += config.events.len();
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 10.0).abs() < 0.3, "mean = {mean}");
    }

    #[test]
    fn geometric_marks_are_uniform_over_retained_atoms() {
        // ε = e^{-5.5}: atoms e^{-1}..e^{-5}, equal weights → rate 5,
        // uniform mark distribution.
        let pi = geometric_e();
        let eps = (-5.5f64).exp();
        assert_relative_eq!(pi.mass_above(eps).unwrap(), 5.0, max_relative = 1e-12);
        let mut counts = [0usize; 5];
        let mut n_events = 0usize;
        for replica in 0..4000 {
            let config = sample_configuration(&pi, (0.0, 1.0), eps, replica, None).unwrap();
            for event in &config.events {
                let n = -event.mark[0].ln();
                let idx = n.round() as usize - 1;
                counts[idx] += 1;
                n_events += 1;
            }
        }
        // Each atom frequency ≈ 0.2; 4σ ≈ 0.012 at ~2·10⁴ events.
        for (i, c) in counts.iter().enumerate() {
            let freq = *c as f64 / n_events as f64;
            assert!((freq - 0.2).abs() < 0.02, "atom {i}: freq {freq}");
        }
    }

    #[test]
    fn configurations_are_deterministic_and_sorted() {
        let pi = geometric_e();
        let a = sample_configuration(&pi, (0.0, 2.0), 0.01, 7, None).unwrap();
        let b = sample_configuration(&pi, (0.0, 2.0), 0.01, 7, None).unwrap();
        assert_eq!(a, b);
        let c = sample_configuration(&pi, (0.0, 2.0), 0.01, 8, None).unwrap();
        assert_ne!(a, c);
        assert!(a.events.windows(2).all(|w| w[0].time < w[1].time));
        assert!(a.events.iter().all(|e| e.mark.norm() >= a.eps_cut));
        // Aux coordinates are reproducible and lie in [0,1).
        if !a.events.is_empty() {
            let x = a.aux_coordinate(0);
            assert_eq!(x, a.aux_coordinate(0));
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn rate_overflow_is_reported() {
        let pi = LevyMeasure::alpha_stable(1, 1.0).unwrap();
        // Rate ≈ 2/ε = 2e9 over a unit window.
        let result = sample_configuration(&pi, (0.0, 1.0), 1e-9, 3, None);
        assert!(matches!(result, Err(SimError::RateOverflow { .. })));
    }

    #[test]
    fn radial_mark_sampler_matches_distribution() {
        // α = 1: restricted to |u| > ε the radial CDF is explicit:
        // P(ρ > s) = (1/s − 1/cap)/(1/ε − 1/cap).
        let pi = LevyMeasure::alpha_stable(1, 1.0).unwrap();
        let eps = 0.01;
        let mut rng = stream(11, "radial-test", 0);
        let (sampler, rate) = MarkSampler::build(&pi, eps).unwrap();
        assert_relative_eq!(rate, 2.0 * (1.0 / eps - 1e-6), max_relative = 1e-9);
        let n = 200_000;
        let mut below_cut = 0usize;
        let mut positive = 0usize;
        for _ in 0..n {
            let u = sampler.sample(&mut rng);
            let rho = u[0].abs();
            assert!(rho >= eps * 0.999);
            if rho <= 0.02 {
                below_cut += 1;
            }
            if u[0] > 0.0 {
                positive += 1;
            }
        }
        // P(ρ ≤ 0.02) = 1 − (1/0.02 − 1e-6)/(1/0.01 − 1e-6) ≈ 0.5.
        let frac = below_cut as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "frac = {frac}");
        let pos = positive as f64 / n as f64;
        assert!((pos - 0.5).abs() < 0.01, "sign split = {pos}");
    }

    #[test]
    fn path_evaluation_arithmetic() {
        // Empty configuration, zero compensator → U ≡ 0.
        let empty = PointConfiguration {
            window: (0.0, 1.0),
            events: vec![],
            eps_cut: 0.1,
            rng_seed: 0,
        };
        let scheme = CutoffScheme {
            eps_cut: 0.1,
            small_jump_mode: SmallJumpMode::Drop,
            compensator: DVector::zeros(1),
            small_jump_cov: None,
        };
        let values = evaluate_levy_path(&empty, &scheme, &[0.0, 0.5, 1.0]).unwrap();
        assert!(values.iter().all(|v| v[0] == 0.0));

        // One event (τ=0.5, u=2) with M^ε = 1: U_1 = 2 − 1.
        let one = PointConfiguration {
            window: (0.0, 1.0),
            events: vec![PointEvent {
                time: 0.5,
                mark: DVector::from_vec(vec![2.0]),
            }],
            eps_cut: 0.1,
            rng_seed: 0,
        };
        let scheme = CutoffScheme {
            eps_cut: 0.1,
            small_jump_mode: SmallJumpMode::Drop,
            compensator: DVector::from_vec(vec![1.0]),
            small_jump_cov: None,
        };
        let values = evaluate_levy_path(&one, &scheme, &[0.25, 0.5, 1.0]).unwrap();
        assert_relative_eq!(values[0][0], -0.25, max_relative = 1e-15);
        // Càdlàg: the jump at τ = 0.5 is included at its own time.
        assert_relative_eq!(values[1][0], 1.5, max_relative = 1e-15);
        assert_relative_eq!(values[2][0], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn compensated_mean_property() {
        // Π = Σ n δ_{1/n!}, ε = 1/4!: retained atoms n ≤ 3 (restriction is
        // strict, the n = 4 atom sits exactly at ε).  With M^ε summing the
        // shell (ε,1), E U_1 = Σ_{n≤3} n/n! − M^ε = 2.5 − 1.5 = 1.
        let pi = LevyMeasure::factorial_atoms(DEFAULT_N_MAX).unwrap();
        let eps = 1.0 / 24.0;
        let scheme = CutoffScheme::drop_mode(&pi, eps).unwrap();
        assert_relative_eq!(scheme.compensator[0], 1.5, max_relative = 1e-14);
        let n = 100_000;
        let mut sum = 0.0;
        for replica in 0..n {
            let config = sample_configuration(&pi, (0.0, 1.0), eps, replica, None).unwrap();
            sum += evaluate_levy_path(&config, &scheme, &[1.0]).unwrap()[0][0];
        }
        let mean = sum / n as f64;
        // Var U_1 = Σ_{n≤3} n/(n!)² = 1 + 1/2 + 1/12; 4 SE at n replicas.
        let se = ((1.0 + 0.5 + 1.0 / 12.0) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "mean = {mean}, 4se = {}", 4.0 * se);
    }

    #[test]
    fn disjoint_window_counts_pass_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete};
        // δ_1 with rate 1 on [0,2): counts on [0,1) follow Poisson(1);
        // counts on the two unit halves are independent.
        let pi = unit_atom_1d();
        let n = 10_000;
        let mut histogram = [0usize; 5]; // 0,1,2,3,≥4 events in [0,1)
        let (mut sum_a, mut sum_b, mut sum_ab) = (0.0, 0.0, 0.0);
        for replica in 0..n {
            let config =
                sample_configuration(&pi, (0.0, 2.0), 0.5, 50_000 + replica, None).unwrap();
            let first = config.events.iter().filter(|e| e.time < 1.0).count();
            let second = config.events.len() - first;
            histogram[first.min(4)] += 1;
            sum_a += first as f64;
            sum_b += second as f64;
            sum_ab += (first * second) as f64;
        }
        let poisson = statrs::distribution::Poisson::new(1.0).unwrap();
        let mut chi2 = 0.0;
        for (k, &observed) in histogram.iter().enumerate() {
            let p = if k < 4 {
                poisson.pmf(k as u64)
            } else {
                1.0 - (0..4).map(|j| poisson.pmf(j)).sum::<f64>()
            };
            let expected = p * n as f64;
            chi2 += (observed as f64 - expected).powi(2) / expected;
        }
        let critical = ChiSquared::new(4.0).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "chi2 = {chi2}, critical = {critical}");
        // Sample covariance of the two window counts ≈ 0.
        let cov = sum_ab / n as f64 - (sum_a / n as f64) * (sum_b / n as f64);
        assert!(cov.abs() < 4.0 / (n as f64).sqrt(), "cov = {cov}");
    }

    #[test]
    fn gaussian_substitute_adds_matched_variance() {
        let config = PointConfiguration {
            window: (0.0, 1.0),
            events: vec![],
            eps_cut: 0.5,
            rng_seed: 0,
        };
        let n = 4000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for replica in 0..n {
            let scheme = CutoffScheme {
                eps_cut: 0.5,
                small_jump_mode: SmallJumpMode::GaussianMatch,
                compensator: DVector::zeros(1),
                small_jump_cov: Some(DMatrix::from_vec(1, 1, vec![4.0])),
            };
            let mut cfg = config.clone();
            cfg.rng_seed = replica;
            let v = evaluate_levy_path(&cfg, &scheme, &[1.0]).unwrap()[0][0];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 * 2.0 / (n as f64).sqrt(), "mean = {mean}");
        assert!((var - 4.0).abs() < 0.5, "var = {var}");
    }

    #[test]
    fn dump_round_trips() {
        let pi = geometric_e();
        let config = sample_configuration(&pi, (0.0, 3.0), 0.01, 99, None).unwrap();
        assert!(!config.events.is_empty());
        let mut buf = Vec::new();
        dump_configuration(&config, 1, &mut buf).unwrap();
        let loaded = load_configuration(&mut buf.as_slice()).unwrap();
        assert_eq!(config, loaded);
    }
}
