//! The differential grid: annuli over jump size, each split into cells that
//! carry their own small time stretch.
//!
//! Cell counts `K_n` follow a budget rule that keeps the per-cell jump
//! intensity small and the total quadratic budget below `gamma`:
//!
//! ```text
//! K_n = floor(max(B, 2·t·Π(I_n), (3/γ)·2^{|n|}·(t·Π(I_n))²)) + 2
//! ```
//!
//! so every annulus has `K_n > B`, `t·Π(I_n)/K_n < 1/2`,
//! `(t·Π(I_n))²/K_n ≤ (γ/3)·2^{−|n|}`, hence `Σ_n (t·Π(I_n))²/K_n < γ`.
//!
//! `K_n` grows like `2^{|n|}` on deep annuli, far past what could ever be
//! materialised, so cells are realised lazily: [`DifferentialGrid::locate`]
//! maps a jump's norm and its auxiliary coordinate straight to a
//! [`CellId`], and only cells that actually receive an event exist.

use crate::levy_measure::LevyMeasure;

use super::stretch::TimeStretch;
use super::VariationError;

/// Sub-index resolution limit: past `2^64` cells the auxiliary coordinate
/// has no more bits to give, so the modulus saturates there.
const SUBINDEX_CAP: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// Grid construction parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    /// Time horizon `t` of the cell stretches and the budget rule.
    pub horizon: f64,
    /// Minimum cell count `B` per annulus.
    pub b: f64,
    /// Total quadratic budget `γ`: `Σ_n (t·Π(I_n))²/K_n < γ`.
    pub gamma: f64,
    /// Mollifier ramp width as a fraction of the horizon (must be < 1/2).
    pub beta_fraction: f64,
    /// Annuli stop once their inner radius falls below this.
    pub eps_floor: f64,
    /// Annuli stop once their outer radius reaches this.
    pub max_radius: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            b: 4.0,
            gamma: 0.25,
            beta_fraction: 0.1,
            eps_floor: 1e-4,
            max_radius: 16.0,
        }
    }
}

/// Annulus radii: `ε_n = 1/(n+1)` for `n ≥ 0` and `ε_n = (|n|+2)/2` for
/// `n ≤ −1`, so `ε_{n+1}/ε_n = 1 − 1/(|n|+2)` on both sides.
pub fn annulus_radius(n: i64) -> f64 {
    if n >= 0 {
        1.0 / (n + 1) as f64
    } else {
        ((-n) as f64 + 2.0) / 2.0
    }
}

/// One annulus `I_n = [ε_{n+1}, ε_n)` with its mass and cell count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusInfo {
    pub n: i64,
    /// Outer radius `ε_n` (exclusive).
    pub eps_hi: f64,
    /// Inner radius `ε_{n+1}` (inclusive).
    pub eps_lo: f64,
    /// `Π(I_n)`.
    pub mass: f64,
    /// Cell count `K_n`; `+∞` when the formula exceeds `f64` range (the
    /// sub-index then saturates at 64 bits of auxiliary resolution).
    pub k_n: f64,
}

/// Lazily realised cell: annulus index plus sub-index within the annulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub n: i64,
    pub k: u64,
}

/// Differential grid over a Lévy measure: the annulus table plus the base
/// stretch that every cell scales.
#[derive(Debug, Clone)]
pub struct DifferentialGrid {
    horizon: f64,
    b: f64,
    gamma: f64,
    base: TimeStretch,
    annuli: Vec<AnnulusInfo>,
}

/// Build the grid for `measure` under `params`.
pub fn build_grid(
    measure: &LevyMeasure,
    params: &GridParams,
) -> Result<DifferentialGrid, VariationError> {
    if !(params.horizon > 0.0 && params.horizon.is_finite()) {
        return Err(VariationError::InvalidParams(format!(
            "horizon must be positive and finite, got {}",
            params.horizon
        )));
    }
    if !(params.b >= 1.0) || !(params.gamma > 0.0) {
        return Err(VariationError::InvalidParams(format!(
            "need B ≥ 1 and γ > 0, got B = {}, γ = {}",
            params.b, params.gamma
        )));
    }
    if !(params.eps_floor > 0.0 && params.eps_floor < 1.0) {
        return Err(VariationError::InvalidParams(format!(
            "eps_floor must lie in (0, 1), got {}",
            params.eps_floor
        )));
    }
    if !(params.max_radius >= 1.0) {
        return Err(VariationError::InvalidParams(format!(
            "max_radius must be ≥ 1, got {}",
            params.max_radius
        )));
    }
    let base = TimeStretch::grid_bump(params.horizon, params.beta_fraction * params.horizon)
        .map_err(|_| {
            VariationError::InvalidParams(format!(
                "beta_fraction must lie in (0, 1/2), got {}",
                params.beta_fraction
            ))
        })?;

    // Innermost index: smallest n with ε_{n+1} = 1/(n+2) ≤ eps_floor.
    let n_hi = ((1.0 / params.eps_floor).ceil() as i64 - 2).max(0);
    // Outermost index: smallest |n| with ε_n = (|n|+2)/2 ≥ max_radius.
    let n_lo = -((2.0 * params.max_radius - 2.0).ceil() as i64).max(1);

    let t = params.horizon;
    let mut annuli = Vec::with_capacity((n_hi - n_lo + 1) as usize);
    for n in n_lo..=n_hi {
        let eps_hi = annulus_radius(n);
        let eps_lo = annulus_radius(n + 1);
        let mass = measure.shell_mass(eps_lo, eps_hi)?;
        let k_n = cell_count(params.b, params.gamma, t, n, mass);
        annuli.push(AnnulusInfo {
            n,
            eps_hi,
            eps_lo,
            mass,
            k_n,
        });
    }
    Ok(DifferentialGrid {
        horizon: params.horizon,
        b: params.b,
        gamma: params.gamma,
        base,
        annuli,
    })
}

/// The cell-count rule (see module docs).  `2^{|n|}·(tΠ)²` overflows `f64`
/// on deep annuli; the returned `+∞` is handled downstream.
fn cell_count(b: f64, gamma: f64, t: f64, n: i64, mass: f64) -> f64 {
    if mass == 0.0 {
        return b.floor() + 2.0;
    }
    let tm = t * mass;
    let quad = (3.0 / gamma) * 2f64.powi(n.unsigned_abs().min(u32::MAX as u64) as i32) * tm * tm;
    b.max(2.0 * tm).max(quad).floor() + 2.0
}

impl DifferentialGrid {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn annuli(&self) -> &[AnnulusInfo] {
        &self.annuli
    }

    /// Radial range covered: `[inner, outer)`.
    pub fn coverage(&self) -> (f64, f64) {
        (
            self.annuli.last().map_or(0.0, |a| a.eps_lo),
            self.annuli.first().map_or(0.0, |a| a.eps_hi),
        )
    }

    /// The cell containing a jump of the given norm, with the sub-index
    /// drawn from the jump's auxiliary coordinate `aux ∈ [0, 1)`.
    pub fn locate(&self, norm: f64, aux: f64) -> Option<CellId> {
        let (inner, outer) = self.coverage();
        if !(norm >= inner && norm < outer) {
            return None;
        }
        // Annuli are stored by ascending n, i.e. descending radius.
        let idx = self.annuli.partition_point(|a| a.eps_lo > norm);
        let annulus = &self.annuli[idx];
        debug_assert!(norm >= annulus.eps_lo && norm < annulus.eps_hi);
        let modulus = annulus.k_n.min(SUBINDEX_CAP);
        let raw = (aux.clamp(0.0, 1.0) * modulus).floor();
        let k = raw.min(modulus - 1.0).max(0.0) as u64;
        Some(CellId { n: annulus.n, k })
    }

    /// Amplitude scale of the cell stretch in annulus `n`:
    /// `ε_n^{−1} ∧ 1` — full strength for small jumps, damped for large.
    pub fn cell_scale(&self, n: i64) -> f64 {
        (1.0 / annulus_radius(n)).min(1.0)
    }

    /// The stretch attached to every cell of annulus `n`.
    pub fn cell_stretch(&self, n: i64) -> TimeStretch {
        self.base.scaled(self.cell_scale(n))
    }

    /// The unscaled grid-bump shape shared by all cells.
    pub fn base_stretch(&self) -> &TimeStretch {
        &self.base
    }

    /// The same grid with every annulus split `factor` times finer.  Radii,
    /// masses and stretches are untouched; only the sub-index modulus
    /// changes, so derivative sums over realised cells must be invariant
    /// whenever no two events shared a cell to begin with.
    pub fn refined(&self, factor: u32) -> Result<Self, VariationError> {
        if factor == 0 {
            return Err(VariationError::InvalidParams(
                "refinement factor must be ≥ 1".into(),
            ));
        }
        let mut out = self.clone();
        for annulus in &mut out.annuli {
            annulus.k_n *= factor as f64;
        }
        Ok(out)
    }
}
