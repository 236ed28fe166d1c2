//! Drift fields `a : ℝ^m → ℝ^m` and numeric non-degeneracy certificates.
//!
//! The central object downstream is the jump increment of the drift,
//! `Δ(x,u) = a(x+u) − a(x)`: it is what a single jump `u` contributes to the
//! derivative of the flow.  This module certifies, by deterministic sampled
//! search, the sector-type condition
//!
//! ```text
//! K_r:  ∀x, v  ∃w = w(x,v) ∈ S_m :  |(Δ(x,y), v)| ≥ D |(y,w)|^r   on V(w,ϱ)
//! ```
//!
//! (a *necessary-condition check*, not a proof), estimates how much jump
//! mass the pair `(a, Π)` activates against each direction
//! ([`nondegeneracy_trend`]), and checks the dissipativity inequality
//! `(a(x), x) ≤ −γ‖x‖²` used by stationary-regime experiments.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::direction::{halton_cube, DirectionGrid};
use crate::levy_measure::{LevyMeasure, MeasureError, MeasureKind};
use crate::quadrature::integrate_radial;

/// Default half-width of the sampling box `[-2,2]^m`.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 2.0;
/// Default number of sampled base points / directions in certificates.
pub const DEFAULT_SAMPLES: usize = 64;
/// Default radius ladder for the test increments `y` (largest to smallest).
pub const DEFAULT_Y_RADII: [f64; 8] = [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625];
/// Ratios below this bar count as a vanished certificate constant.
pub const CERTIFICATE_PASS_TOL: f64 = 1e-8;
/// Default tolerance standing in for "≠ 0" in the trend estimate.
pub const DEFAULT_TREND_TOL: f64 = 1e-10;
/// Sensitivity sweep around [`DEFAULT_TREND_TOL`].
pub const TREND_TOL_SWEEP: [f64; 3] = [1e-6, 1e-10, 1e-14];
/// Default cutoff indices `n` (mass of `‖u‖ ≥ 1/n` is tracked along these).
pub const DEFAULT_TREND_CUTOFFS: [f64; 8] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8];

#[derive(Debug, Error)]
pub enum DriftError {
    #[error("dimension mismatch: drift has dim {drift}, argument has dim {arg}")]
    DimensionMismatch { drift: usize, arg: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "gradient inconsistent with evaluator at x = {x:?}: relative error {rel_err:.3e} \
         exceeds 1e-4"
    )]
    GradientInconsistent { x: Vec<f64>, rel_err: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Builtin structure tags (used for exact fast paths and reporting).
#[derive(Debug, Clone)]
pub enum DriftKind {
    Linear(DMatrix<f64>),
    NegIdentity,
    /// 1D polynomial `c₀ + c₁ x + …` by ascending coefficients.
    Polynomial1D(Vec<f64>),
    Custom,
}

type EvalFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type GradFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A `C¹` drift field with evaluator and gradient.
#[derive(Clone)]
pub struct DriftField {
    dim: usize,
    kind: DriftKind,
    eval: EvalFn,
    grad: GradFn,
    lipschitz_bound: Option<f64>,
}

impl std::fmt::Debug for DriftField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriftField")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .finish()
    }
}

impl DriftField {
    /// `a(x) = A x`.
    pub fn linear(a: DMatrix<f64>) -> Result<Self, DriftError> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(DriftError::InvalidParameter(
                "linear drift needs a nonempty square matrix".into(),
            ));
        }
        let dim = a.nrows();
        let a_eval = a.clone();
        let a_grad = a.clone();
        let lipschitz = a.norm();
        Ok(Self {
            dim,
            kind: DriftKind::Linear(a),
            eval: Arc::new(move |x| &a_eval * x),
            grad: Arc::new(move |_| a_grad.clone()),
            lipschitz_bound: Some(lipschitz),
        })
    }

    /// `a(x) = −x`.
    pub fn neg_identity(dim: usize) -> Self {
        let eye = DMatrix::<f64>::identity(dim, dim);
        Self {
            dim,
            kind: DriftKind::NegIdentity,
            eval: Arc::new(|x| -x.clone()),
            grad: Arc::new(move |_| -eye.clone()),
            lipschitz_bound: Some(1.0),
        }
    }

    /// `a ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            kind: DriftKind::Linear(DMatrix::zeros(dim, dim)),
            eval: Arc::new(move |x| DVector::zeros(x.len())),
            grad: Arc::new(move |x| DMatrix::zeros(x.len(), x.len())),
            lipschitz_bound: Some(0.0),
        }
    }

    /// 1D polynomial drift by ascending coefficients.
    pub fn polynomial_1d(coefficients: Vec<f64>) -> Result<Self, DriftError> {
        if coefficients.is_empty() {
            return Err(DriftError::InvalidParameter(
                "polynomial drift needs at least one coefficient".into(),
            ));
        }
        let coeffs = coefficients.clone();
        let derivative: Vec<f64> = coefficients
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect();
        let horner = |c: &[f64], x: f64| c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck);
        let coeffs_grad = derivative;
        Ok(Self {
            dim: 1,
            kind: DriftKind::Polynomial1D(coefficients),
            eval: Arc::new(move |x| DVector::from_vec(vec![horner(&coeffs, x[0])])),
            grad: Arc::new(move |x| {
                DMatrix::from_vec(1, 1, vec![horner(&coeffs_grad, x[0])])
            }),
            lipschitz_bound: None,
        })
    }

    /// Custom field; when no gradient is supplied a central finite difference
    /// with step `1e-6` is used.
    pub fn custom(
        dim: usize,
        eval: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        grad: Option<GradFn>,
        lipschitz_bound: Option<f64>,
    ) -> Self {
        let eval: EvalFn = Arc::new(eval);
        let grad = grad.unwrap_or_else(|| {
            let eval = eval.clone();
            Arc::new(move |x: &DVector<f64>| {
                let m = x.len();
                let h = 1e-6;
                let mut jac = DMatrix::zeros(m, m);
                for j in 0..m {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let col = (eval(&xp) - eval(&xm)) / (2.0 * h);
                    jac.set_column(j, &col);
                }
                jac
            })
        });
        Self {
            dim,
            kind: DriftKind::Custom,
            eval,
            grad,
            lipschitz_bound,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz_bound
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.grad)(x)
    }

    /// Smallest growth constant `K` with `‖a(x)‖² ≤ K(1+‖x‖²)` observed over
    /// a Halton sample of the box `[-half_width, half_width]^m`.
    pub fn growth_constant(&self, half_width: f64, n_points: usize) -> f64 {
        let mut worst = 0.0f64;
        for i in 1..=n_points {
            let x = self.halton_box_point(i, half_width);
            let a = self.eval(&x);
            worst = worst.max(a.norm_squared() / (1.0 + x.norm_squared()));
        }
        worst
    }

    /// Check gradient/evaluator consistency by central finite differences at
    /// Halton points of the box (relative error ≤ 1e-4 per point).
    pub fn check_gradient_consistency(
        &self,
        half_width: f64,
        n_points: usize,
    ) -> Result<(), DriftError> {
        let h = 1e-5;
        for i in 1..=n_points {
            let x = self.halton_box_point(i, half_width);
            let jac = self.gradient(&x);
            let mut fd = DMatrix::zeros(self.dim, self.dim);
            for j in 0..self.dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                fd.set_column(j, &((self.eval(&xp) - self.eval(&xm)) / (2.0 * h)));
            }
            let scale = jac.norm().max(1.0);
            let rel_err = (&jac - &fd).norm() / scale;
            if rel_err > 1e-4 {
                return Err(DriftError::GradientInconsistent {
                    x: x.iter().copied().collect(),
                    rel_err,
                });
            }
        }
        Ok(())
    }

    fn halton_box_point(&self, index: usize, half_width: f64) -> DVector<f64> {
        let unit = halton_cube(index, self.dim);
        DVector::from_iterator(self.dim, unit.into_iter().map(|u| (2.0 * u - 1.0) * half_width))
    }
}

/// `Δ(x,u) = a(x+u) − a(x)`.
pub fn delta(a: &DriftField, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    a.eval(&(x + u)) - a.eval(x)
}

/// One sampled `(x, v)` pair of a certificate with its matched witness.
#[derive(Debug, Clone)]
pub struct KrSample {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    /// Best witness direction `w(x,v)` found on the lattice.
    pub witness: DVector<f64>,
    /// `min_y |(Δ(x,y),v)| / |(y,w)|^r` at that witness.
    pub ratio: f64,
}

/// Informative note: `∇a` numerically singular at a sampled point.
#[derive(Debug, Clone)]
pub struct GradientWarning {
    pub x: DVector<f64>,
    pub sigma_min: f64,
}

/// Sampled certificate for the sector condition `K_r`.
#[derive(Debug, Clone)]
pub struct KrCertificate {
    pub r: u32,
    pub varrho: f64,
    pub pass: bool,
    /// Observed uniform constant `D = min_{x,v} max_w min_y ratio`.
    pub constant: f64,
    pub samples: Vec<KrSample>,
    pub warnings: Vec<GradientWarning>,
}

/// Unit directions spanning the two-sided cone `V(w,ϱ)`, deterministic.
fn cone_rays(w: &DVector<f64>, varrho: f64, n_rays: usize) -> Vec<DVector<f64>> {
    let m = w.len();
    if m == 1 {
        return vec![w.clone(), -w.clone()];
    }
    // Orthonormal complement of w by Gram–Schmidt on the standard basis.
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m - 1);
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        e -= w * w.dot(&e);
        for b in &basis {
            let proj = b.dot(&e);
            e -= b * proj;
        }
        let norm = e.norm();
        if norm > 1e-8 {
            basis.push(e / norm);
        }
        if basis.len() == m - 1 {
            break;
        }
    }
    let theta_max = 0.95 * varrho.acos();
    let mut rays = Vec::with_capacity(n_rays);
    for j in 0..n_rays {
        let lobe = if j % 2 == 0 { 1.0 } else { -1.0 };
        let theta = theta_max * (j / 2) as f64 / ((n_rays / 2).max(1) as f64);
        let q = &basis[j % basis.len()];
        rays.push(w * (lobe * theta.cos()) + q * theta.sin());
    }
    rays
}

/// Sampled search for the sector-condition constant `D(a, r, ϱ)`.
///
/// For every Halton point `x` of the box and every lattice direction `v`,
/// the witness `w` is searched over the direction lattice, maximising the
/// worst ratio `|(Δ(x,y),v)| / |(y,w)|^r` over test increments `y` along
/// rays of `V(w,ϱ)` at the given radii.  `pass` means a uniform positive
/// constant was observed on the sample — a necessary-condition check, not a
/// proof of membership.
pub fn k_r_certificate(
    a: &DriftField,
    r: u32,
    varrho: f64,
    box_half_width: f64,
    n_x: usize,
    n_v: usize,
    y_radii: &[f64],
) -> Result<KrCertificate, DriftError> {
    if r == 0 {
        return Err(DriftError::InvalidParameter("order r must be ≥ 1".into()));
    }
    if !(varrho > 0.0 && varrho < 1.0) {
        return Err(DriftError::InvalidParameter(format!(
            "aperture must lie in (0,1), got {varrho}"
        )));
    }
    if y_radii.is_empty() || y_radii.iter().any(|&rad| !(rad > 0.0)) {
        return Err(DriftError::InvalidParameter(
            "test radii must be positive".into(),
        ));
    }
    let m = a.dim();
    let v_grid = DirectionGrid::standard(m, n_v);
    let w_grid = DirectionGrid::standard(m, crate::direction::DEFAULT_RESOLUTION);
    let n_rays = if m == 1 { 2 } else { 16 };

    let mut samples = Vec::with_capacity(n_x * v_grid.len());
    let mut warnings = Vec::new();
    let mut constant = f64::INFINITY;

    for i in 1..=n_x {
        let x = a.halton_box_point(i, box_half_width);
        let jac = a.gradient(&x);
        let sigma_min = jac
            .svd(false, false)
            .singular_values
            .iter()
            .fold(f64::INFINITY, |acc, s| acc.min(*s));
        if sigma_min < 1e-8 {
            warnings.push(GradientWarning {
                x: x.clone(),
                sigma_min,
            });
        }
        // Δ(x, ρ·e) tables per witness candidate: v enters only via a dot
        // product, so the drift evaluations are shared across all v.
        let mut tables: Vec<(usize, Vec<(f64, DVector<f64>)>)> = Vec::with_capacity(w_grid.len());
        for (wi, w) in w_grid.iter().enumerate() {
            let mut entries = Vec::with_capacity(n_rays * y_radii.len());
            for e in cone_rays(w, varrho, n_rays) {
                let proj = e.dot(w).abs();
                for &rad in y_radii {
                    let y = &e * rad;
                    entries.push(((rad * proj).powi(r as i32), delta(a, &x, &y)));
                }
            }
            tables.push((wi, entries));
        }
        for v in v_grid.iter() {
            let mut best_ratio = 0.0f64;
            let mut best_w = 0usize;
            for (wi, entries) in &tables {
                let mut worst = f64::INFINITY;
                for (denom, dvec) in entries {
                    worst = worst.min(v.dot(dvec).abs() / denom);
                    if worst <= best_ratio {
                        break;
                    }
                }
                if worst > best_ratio {
                    best_ratio = worst;
                    best_w = *wi;
                }
            }
            constant = constant.min(best_ratio);
            samples.push(KrSample {
                x: x.clone(),
                v: v.clone(),
                witness: w_grid.get(best_w).clone(),
                ratio: best_ratio,
            });
        }
    }
    Ok(KrCertificate {
        r,
        varrho,
        pass: constant > CERTIFICATE_PASS_TOL,
        constant,
        samples,
        warnings,
    })
}

/// Mass sequence of one direction in the non-degeneracy trend.
#[derive(Debug, Clone)]
pub struct TrendDirection {
    pub axis: DVector<f64>,
    /// `Π(u : ‖u‖ ≥ 1/n, |(Δ(x,u),v)| > tol)` along the cutoff list.
    pub masses: Vec<f64>,
    pub divergent: bool,
}

#[derive(Debug, Clone)]
pub struct TrendReport {
    pub x: DVector<f64>,
    pub tol: f64,
    pub cutoffs: Vec<f64>,
    pub per_direction: Vec<TrendDirection>,
    /// All directions' masses grow without an apparent bound.
    pub all_divergent: bool,
}

/// Estimate how much jump mass is active against each direction:
/// `n ↦ Π(u : ‖u‖ ≥ 1/n, |(Δ(x,u),v)| > tol)`.
///
/// The verdict per direction is *divergent* when the mass at the last cutoff
/// at least doubles the first one (and is positive) — an evidence tool for
/// the condition that `(Δ(x,u),v)` does not vanish Π-a.e., not a proof.
pub fn nondegeneracy_trend(
    a: &DriftField,
    measure: &LevyMeasure,
    x: &DVector<f64>,
    v_grid: usize,
    cutoffs: &[f64],
    tol: f64,
) -> Result<TrendReport, DriftError> {
    if !(tol > 0.0) {
        return Err(DriftError::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if cutoffs.len() < 2 || cutoffs.windows(2).any(|w| w[0] >= w[1]) || cutoffs[0] < 1.0 {
        return Err(DriftError::InvalidParameter(
            "cutoff indices must be increasing and ≥ 1".into(),
        ));
    }
    if x.len() != a.dim() || measure.dim() != a.dim() {
        return Err(DriftError::DimensionMismatch {
            drift: a.dim(),
            arg: x.len().max(measure.dim()),
        });
    }
    let grid = DirectionGrid::standard(a.dim(), v_grid);
    let mut per_direction = Vec::with_capacity(grid.len());
    for v in grid.iter() {
        let masses: Vec<f64> = cutoffs
            .iter()
            .map(|&n| trend_mass(a, measure, x, v, 1.0 / n, tol))
            .collect::<Result<_, _>>()?;
        let first = masses[0];
        let last = *masses.last().unwrap();
        let divergent = last > 0.0 && last >= 2.0 * first;
        per_direction.push(TrendDirection {
            axis: v.clone(),
            masses,
            divergent,
        });
    }
    let all_divergent = per_direction.iter().all(|d| d.divergent);
    Ok(TrendReport {
        x: x.clone(),
        tol,
        cutoffs: cutoffs.to_vec(),
        per_direction,
        all_divergent,
    })
}

/// `Π(u : ‖u‖ ≥ floor, |(Δ(x,u),v)| > tol)`.
fn trend_mass(
    a: &DriftField,
    measure: &LevyMeasure,
    x: &DVector<f64>,
    v: &DVector<f64>,
    floor: f64,
    tol: f64,
) -> Result<f64, DriftError> {
    match measure.kind() {
        MeasureKind::Atomic(atoms) => Ok(atoms
            .iter()
            .filter(|at| {
                at.location.norm() >= floor && v.dot(&delta(a, x, &at.location)).abs() > tol
            })
            .map(|at| at.weight)
            .sum()),
        MeasureKind::Radial(rad) => {
            let lo = rad.support.0.max(floor);
            let hi = rad.support.1;
            if lo >= hi {
                return Ok(0.0);
            }
            // Angular acceptance probability by lattice average (128 points),
            // radial part by quadrature.
            let angular: Vec<(DVector<f64>, f64)> = match &rad.angular {
                crate::levy_measure::AngularPart::Signs { plus, minus } => vec![
                    (DVector::from_vec(vec![1.0]), *plus),
                    (DVector::from_vec(vec![-1.0]), *minus),
                ],
                crate::levy_measure::AngularPart::UniformSphere => {
                    let lattice = DirectionGrid::standard(measure.dim(), 128);
                    let weight = 1.0 / lattice.len() as f64;
                    lattice.iter().map(|th| (th.clone(), weight)).collect()
                }
            };
            let profile = match measure.kind() {
                MeasureKind::Radial(r) => r.profile.clone(),
                _ => unreachable!(),
            };
            let mut f = |rho: f64| {
                let accepted: f64 = angular
                    .iter()
                    .filter(|(theta, _)| v.dot(&delta(a, x, &(theta * rho))).abs() > tol)
                    .map(|(_, w)| w)
                    .sum();
                accepted * profile.eval(rho)
            };
            Ok(integrate_radial(
                &mut f,
                lo,
                hi,
                &[],
                1e-7,
                "nondegeneracy trend mass",
            )
            .map_err(MeasureError::from)?)
        }
        MeasureKind::Mixture(parts) => {
            let mut acc = 0.0;
            for (w, part) in parts {
                acc += w * trend_mass(a, part, x, v, floor, tol)?;
            }
            Ok(acc)
        }
    }
}

#[derive(Debug, Clone)]
pub struct DissipativityReport {
    pub holds: bool,
    /// `min −(a(x),x)/‖x‖²` over the sampled annulus `‖x‖ ∈ [R, 4R]`.
    pub gamma_estimate: f64,
    pub radius: f64,
}

/// Check the dissipativity inequality `(a(x),x) ≤ −γ‖x‖²` on `‖x‖ ∈ [R,4R]`.
pub fn dissipativity_check(
    a: &DriftField,
    radius: f64,
    n_samples: usize,
) -> Result<DissipativityReport, DriftError> {
    if !(radius > 0.0) {
        return Err(DriftError::InvalidParameter(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let dirs = DirectionGrid::standard(a.dim(), n_samples.max(2));
    let n_radii = 8;
    let mut gamma = f64::INFINITY;
    for v in dirs.iter() {
        for k in 0..n_radii {
            let rho = radius * (1.0 + 3.0 * k as f64 / (n_radii - 1) as f64);
            let x = v * rho;
            gamma = gamma.min(-a.eval(&x).dot(&x) / x.norm_squared());
        }
    }
    Ok(DissipativityReport {
        holds: gamma > 0.0,
        gamma_estimate: gamma,
        radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cubic() -> DriftField {
        DriftField::polynomial_1d(vec![0.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn delta_examples() {
        let neg = DriftField::neg_identity(2);
        let x = DVector::from_vec(vec![0.3, -1.1]);
        let u = DVector::from_vec(vec![0.5, 0.25]);
        assert_relative_eq!(delta(&neg, &x, &u), -u.clone(), max_relative = 1e-15);

        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let lin = DriftField::linear(a.clone()).unwrap();
        assert_relative_eq!(delta(&lin, &x, &u), &a * &u, max_relative = 1e-14);

        let x1 = DVector::from_vec(vec![1.0]);
        let u1 = DVector::from_vec(vec![0.5]);
        assert_relative_eq!(delta(&cubic(), &x1, &u1)[0], 2.375, max_relative = 1e-14);
    }

    #[test]
    fn delta_identities() {
        let mut rng = crate::rng::stream(7, "drift-identities", 0);
        let fields = [
            DriftField::neg_identity(3),
            DriftField::custom(
                3,
                |x| DVector::from_vec(vec![x[0].sin(), x[1] * x[2], x[0] - x[2].cos()]),
                None,
                None,
            ),
        ];
        for a in &fields {
            for _ in 0..50 {
                let x = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
                let u = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
                let zero = delta(a, &x, &DVector::zeros(3));
                assert_eq!(zero.norm(), 0.0);
                let fwd = delta(a, &x, &u);
                let bwd = delta(a, &(&x + &u), &(-u.clone()));
                assert!((fwd + bwd).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_consistency_checks() {
        for a in [
            DriftField::linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap(),
            DriftField::neg_identity(3),
            cubic(),
            DriftField::custom(2, |x| DVector::from_vec(vec![x[1].cos(), x[0] * x[0]]), None, None),
        ] {
            a.check_gradient_consistency(2.0, 100).unwrap();
        }
        // A deliberately wrong gradient must be caught.
        let bad = DriftField::custom(
            1,
            |x| DVector::from_vec(vec![x[0] * x[0]]),
            Some(Arc::new(|_x: &DVector<f64>| DMatrix::from_vec(1, 1, vec![42.0]))),
            None,
        );
        assert!(matches!(
            bad.check_gradient_consistency(2.0, 10),
            Err(DriftError::GradientInconsistent { .. })
        ));
    }

    #[test]
    fn growth_constant_linear() {
        let lin = DriftField::neg_identity(2);
        // ‖-x‖²/(1+‖x‖²) < 1 everywhere.
        assert!(lin.growth_constant(2.0, 200) < 1.0);
    }

    #[test]
    fn certificate_linear_nonsingular_passes_r1() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let sigma_min = a
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(f64::INFINITY, |m, s| m.min(*s));
        let lin = DriftField::linear(a).unwrap();
        let cert = k_r_certificate(&lin, 1, 0.25, 2.0, 16, 32, &DEFAULT_Y_RADII).unwrap();
        assert!(cert.pass);
        // For linear fields with the exact witness Aᵀv/‖Aᵀv‖ the ratio is
        // ‖Aᵀv‖ ≥ σ_min; the lattice search may land slightly above or below.
        assert!(cert.constant > 0.5 * sigma_min, "D = {}", cert.constant);
        assert!(cert.warnings.is_empty());
    }

    #[test]
    fn certificate_singular_linear_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let lin = DriftField::linear(a).unwrap();
        let cert = k_r_certificate(&lin, 1, 0.25, 2.0, 8, 16, &DEFAULT_Y_RADII).unwrap();
        assert!(!cert.pass);
        assert!(!cert.warnings.is_empty()); // ∇a singular everywhere
    }

    #[test]
    fn certificate_zero_drift_fails_all_orders() {
        let zero = DriftField::zero(1);
        for r in [1, 2, 3] {
            let cert = k_r_certificate(&zero, r, 0.25, 2.0, 8, 8, &DEFAULT_Y_RADII).unwrap();
            assert!(!cert.pass, "r = {r}");
            assert_eq!(cert.constant, 0.0);
        }
    }

    #[test]
    fn certificate_cubic_passes_r3() {
        let cert = k_r_certificate(&cubic(), 3, 0.25, 2.0, 64, 2, &DEFAULT_Y_RADII).unwrap();
        assert!(cert.pass, "D = {}", cert.constant);
        // x³ has vanishing derivative at the origin; if the Halton sample
        // hits it the warning channel must say so.
        let near_zero_sampled = cert.samples.iter().any(|s| s.x[0].abs() < 1e-6);
        if near_zero_sampled {
            assert!(!cert.warnings.is_empty());
        }
        // Δ(x,y)/y³ = 3(x/y + 1/2)² + 1/4, so the uniform constant over the
        // box is exactly 1/4 (attained at x = −y/2).
        assert!(
            cert.constant >= 0.24 && cert.constant <= 0.35,
            "D = {}",
            cert.constant
        );
    }

    #[test]
    fn cone_rays_stay_inside_cone() {
        let w = DVector::from_vec(vec![0.6, 0.8]);
        for e in cone_rays(&w, 0.25, 16) {
            assert_relative_eq!(e.norm(), 1.0, max_relative = 1e-12);
            assert!(e.dot(&w).abs() >= 0.25);
        }
    }

    #[test]
    fn trend_neg_identity_alpha_stable_divergent() {
        let a = DriftField::neg_identity(1);
        let pi = LevyMeasure::alpha_stable(1, 1.0).unwrap();
        let x = DVector::from_vec(vec![0.5]);
        let report =
            nondegeneracy_trend(&a, &pi, &x, 2, &DEFAULT_TREND_CUTOFFS, DEFAULT_TREND_TOL)
                .unwrap();
        assert!(report.all_divergent);
        // Masses follow Π(|u| ≥ 1/n) = 2(n − 10^{-6}) for α = 1.
        let masses = &report.per_direction[0].masses;
        assert_relative_eq!(masses[0], 2.0 * (10.0 - 1e-6), max_relative = 1e-6);
    }

    #[test]
    fn trend_zero_drift_not_divergent() {
        let a = DriftField::zero(1);
        let pi = LevyMeasure::alpha_stable(1, 1.0).unwrap();
        let x = DVector::from_vec(vec![0.0]);
        let report =
            nondegeneracy_trend(&a, &pi, &x, 2, &DEFAULT_TREND_CUTOFFS, DEFAULT_TREND_TOL)
                .unwrap();
        assert!(!report.all_divergent);
        assert!(report
            .per_direction
            .iter()
            .all(|d| d.masses.iter().all(|&m| m == 0.0)));
    }

    #[test]
    fn trend_parabola_atoms_divergent_everywhere() {
        // Lines meet the parabola in at most two points, so every direction
        // keeps collecting atoms as the cutoff shrinks.
        let a = DriftField::linear(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 1.0])).unwrap();
        let pi = LevyMeasure::parabola_atoms(crate::levy_measure::DEFAULT_N_MAX).unwrap();
        let x = DVector::from_vec(vec![0.7, -0.4]);
        let report =
            nondegeneracy_trend(&a, &pi, &x, 64, &DEFAULT_TREND_CUTOFFS, DEFAULT_TREND_TOL)
                .unwrap();
        assert!(report.all_divergent);
    }

    #[test]
    fn trend_masses_monotone_in_tol() {
        let a = DriftField::neg_identity(2);
        let pi = LevyMeasure::parabola_atoms(crate::levy_measure::DEFAULT_N_MAX).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let mut prev: Option<Vec<f64>> = None;
        for tol in TREND_TOL_SWEEP {
            let report =
                nondegeneracy_trend(&a, &pi, &x, 8, &DEFAULT_TREND_CUTOFFS, tol).unwrap();
            let masses: Vec<f64> = report
                .per_direction
                .iter()
                .flat_map(|d| d.masses.iter().copied())
                .collect();
            if let Some(p) = &prev {
                // Shrinking tol keeps every previously counted atom.
                assert!(masses.iter().zip(p).all(|(now, before)| now >= before));
            }
            prev = Some(masses);
        }
    }

    #[test]
    fn dissipativity_examples() {
        let neg = DriftField::neg_identity(2);
        let rep = dissipativity_check(&neg, 1.0, 32).unwrap();
        assert!(rep.holds);
        assert_relative_eq!(rep.gamma_estimate, 1.0, max_relative = 1e-12);

        let expanding = DriftField::linear(DMatrix::identity(2, 2)).unwrap();
        assert!(!dissipativity_check(&expanding, 1.0, 32).unwrap().holds);

        let cubic_decay = DriftField::polynomial_1d(vec![0.0, 0.0, 0.0, -1.0]).unwrap();
        let rep = dissipativity_check(&cubic_decay, 1.0, 8).unwrap();
        assert!(rep.holds);
        assert_relative_eq!(rep.gamma_estimate, 1.0, max_relative = 1e-12);
    }
}
