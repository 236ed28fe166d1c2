//! Scenario configuration: TOML schema, validation, and resolution into
//! core objects.
//!
//! The schema is fail-fast: unknown keys are rejected everywhere, the
//! `schema_version` must match, and fields irrelevant to the declared
//! `kind` of a measure or drift are errors rather than silently ignored.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use levylab::drift::DriftField;
use levylab::levy_measure::LevyMeasure;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A whole config file: schema version plus a list of scenarios.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let mut seen = HashSet::new();
        for scenario in &file.scenarios {
            if scenario.id.is_empty() {
                return Err(CliError::Config("scenario id must be nonempty".into()));
            }
            if !seen.insert(scenario.id.as_str()) {
                return Err(CliError::Config(format!(
                    "duplicate scenario id '{}'",
                    scenario.id
                )));
            }
            scenario.validate()?;
        }
        Ok(file)
    }
}

/// One experiment over one measure/drift pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub experiment: ExperimentKind,
    /// Base seed; the effective per-scenario seed hashes this with the id.
    #[serde(default)]
    pub seed: u64,
    pub measure: MeasureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Horizon>,
    #[serde(default)]
    pub budgets: Budgets,
}

impl Scenario {
    /// Eager structural validation: everything that can fail without
    /// running the experiment should fail at parse time.
    pub fn validate(&self) -> Result<(), CliError> {
        let measure = self.measure.build()?;
        if let Some(drift) = &self.drift {
            drift.build(measure.dim())?;
        }
        if let Some(horizon) = &self.horizon {
            horizon.resolve()?;
        }
        self.budgets.validate()?;
        Ok(())
    }

    pub fn build_measure(&self) -> Result<LevyMeasure, CliError> {
        self.measure.build()
    }

    pub fn build_drift(&self, dim: usize) -> Result<DriftField, CliError> {
        match &self.drift {
            Some(spec) => spec.build(dim),
            None => Err(CliError::Config(format!(
                "scenario '{}': experiment '{}' needs a [scenario.drift] table",
                self.id, self.experiment
            ))),
        }
    }

    /// Horizons; defaults to `[1.0]` when no horizon table is given.
    pub fn horizons(&self) -> Result<Vec<f64>, CliError> {
        match &self.horizon {
            Some(h) => h.resolve(),
            None => Ok(vec![1.0]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Indices,
    WideCone,
    Admissibility,
    DerivativeCheck,
    Malliavin,
    DensitySweep,
    CharProbe,
    Stationary,
    Regime,
    TvContinuity,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ExperimentKind::Indices => "indices",
            ExperimentKind::WideCone => "wide_cone",
            ExperimentKind::Admissibility => "admissibility",
            ExperimentKind::DerivativeCheck => "derivative_check",
            ExperimentKind::Malliavin => "malliavin",
            ExperimentKind::DensitySweep => "density_sweep",
            ExperimentKind::CharProbe => "char_probe",
            ExperimentKind::Stationary => "stationary",
            ExperimentKind::Regime => "regime",
            ExperimentKind::TvContinuity => "tv_continuity",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKindTag {
    GeometricAtoms,
    FactorialAtoms,
    ParabolaAtoms,
    AlphaStable,
    SingleAtom,
}

/// Measure spec: a `kind` tag plus the parameters that kind needs.
/// Parameters not used by the declared kind are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub kind: MeasureKindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl MeasureSpec {
    fn check_unused(&self, kind: &str, used: &[&str]) -> Result<(), CliError> {
        let present: &[(&str, bool)] = &[
            ("gamma", self.gamma.is_some()),
            ("n_max", self.n_max.is_some()),
            ("dim", self.dim.is_some()),
            ("alpha", self.alpha.is_some()),
            ("location", self.location.is_some()),
            ("weight", self.weight.is_some()),
        ];
        for (name, is_set) in present {
            if *is_set && !used.contains(name) {
                return Err(CliError::Config(format!(
                    "measure kind '{kind}' does not take field '{name}'"
                )));
            }
        }
        Ok(())
    }

    fn require<T: Copy>(&self, kind: &str, name: &str, value: Option<T>) -> Result<T, CliError> {
        value.ok_or_else(|| {
            CliError::Config(format!("measure kind '{kind}' needs field '{name}'"))
        })
    }

    pub fn build(&self) -> Result<LevyMeasure, CliError> {
        let wrap = |r: Result<LevyMeasure, levylab::levy_measure::MeasureError>| {
            r.map_err(|e| CliError::Config(format!("measure: {e}")))
        };
        match self.kind {
            MeasureKindTag::GeometricAtoms => {
                self.check_unused("geometric-atoms", &["gamma", "n_max"])?;
                let gamma = self.require("geometric-atoms", "gamma", self.gamma)?;
                let n_max = self.n_max.unwrap_or(levylab::levy_measure::DEFAULT_N_MAX);
                wrap(LevyMeasure::geometric_atoms(gamma, n_max))
            }
            MeasureKindTag::FactorialAtoms => {
                self.check_unused("factorial-atoms", &["n_max"])?;
                let n_max = self.n_max.unwrap_or(levylab::levy_measure::DEFAULT_N_MAX);
                wrap(LevyMeasure::factorial_atoms(n_max))
            }
            MeasureKindTag::ParabolaAtoms => {
                self.check_unused("parabola-atoms", &["n_max"])?;
                let n_max = self.n_max.unwrap_or(levylab::levy_measure::DEFAULT_N_MAX);
                wrap(LevyMeasure::parabola_atoms(n_max))
            }
            MeasureKindTag::AlphaStable => {
                self.check_unused("alpha-stable", &["dim", "alpha"])?;
                let dim = self.require("alpha-stable", "dim", self.dim)?;
                let alpha = self.require("alpha-stable", "alpha", self.alpha)?;
                wrap(LevyMeasure::alpha_stable(dim, alpha))
            }
            MeasureKindTag::SingleAtom => {
                self.check_unused("single-atom", &["location", "weight"])?;
                let location = self.location.clone().ok_or_else(|| {
                    CliError::Config("measure kind 'single-atom' needs field 'location'".into())
                })?;
                let weight = self.weight.unwrap_or(1.0);
                wrap(LevyMeasure::single_atom(DVector::from_vec(location), weight))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftKindTag {
    Zero,
    NegIdentity,
    Linear,
    Polynomial1d,
}

/// Drift spec: a `kind` tag plus that kind's parameters.  The dimension is
/// taken from the measure unless given explicitly (then they must agree).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub kind: DriftKindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
}

impl DriftSpec {
    pub fn build(&self, measure_dim: usize) -> Result<DriftField, CliError> {
        if let Some(dim) = self.dim {
            if dim != measure_dim {
                return Err(CliError::Config(format!(
                    "drift dim {dim} disagrees with measure dim {measure_dim}"
                )));
            }
        }
        let wrap = |r: Result<DriftField, levylab::drift::DriftError>| {
            r.map_err(|e| CliError::Config(format!("drift: {e}")))
        };
        match self.kind {
            DriftKindTag::Zero => {
                self.forbid("zero", self.matrix.is_some(), "matrix")?;
                self.forbid("zero", self.coefficients.is_some(), "coefficients")?;
                Ok(DriftField::zero(measure_dim))
            }
            DriftKindTag::NegIdentity => {
                self.forbid("neg-identity", self.matrix.is_some(), "matrix")?;
                self.forbid("neg-identity", self.coefficients.is_some(), "coefficients")?;
                Ok(DriftField::neg_identity(measure_dim))
            }
            DriftKindTag::Linear => {
                self.forbid("linear", self.coefficients.is_some(), "coefficients")?;
                let rows = self.matrix.clone().ok_or_else(|| {
                    CliError::Config("drift kind 'linear' needs field 'matrix'".into())
                })?;
                if rows.len() != measure_dim || rows.iter().any(|r| r.len() != measure_dim) {
                    return Err(CliError::Config(format!(
                        "drift matrix must be {measure_dim}×{measure_dim}"
                    )));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                wrap(DriftField::linear(DMatrix::from_row_slice(
                    measure_dim,
                    measure_dim,
                    &flat,
                )))
            }
            DriftKindTag::Polynomial1d => {
                self.forbid("polynomial-1d", self.matrix.is_some(), "matrix")?;
                if measure_dim != 1 {
                    return Err(CliError::Config(
                        "drift kind 'polynomial-1d' needs a one-dimensional measure".into(),
                    ));
                }
                let coefficients = self.coefficients.clone().ok_or_else(|| {
                    CliError::Config("drift kind 'polynomial-1d' needs field 'coefficients'".into())
                })?;
                wrap(DriftField::polynomial_1d(coefficients))
            }
        }
    }

    fn forbid(&self, kind: &str, is_set: bool, name: &str) -> Result<(), CliError> {
        if is_set {
            Err(CliError::Config(format!(
                "drift kind '{kind}' does not take field '{name}'"
            )))
        } else {
            Ok(())
        }
    }
}

/// Time horizon(s): exactly one of `t` or `t_list`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_list: Option<Vec<f64>>,
}

impl Horizon {
    pub fn resolve(&self) -> Result<Vec<f64>, CliError> {
        let list = match (self.t, &self.t_list) {
            (Some(t), None) => vec![t],
            (None, Some(list)) => list.clone(),
            _ => {
                return Err(CliError::Config(
                    "horizon needs exactly one of 't' or 't_list'".into(),
                ))
            }
        };
        if list.is_empty() || list.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(CliError::Config(
                "horizons must be positive and finite".into(),
            ));
        }
        Ok(list)
    }
}

/// Experiment budgets and expectations.  All fields are optional; each
/// experiment documents its defaults and embeds the resolved values in its
/// report.  `expect_*` fields turn report entries into assertions (exit
/// code 3 when violated).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budgets {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_cut: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    /// Certificate / smoothness order `r`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<u32>,
    /// Number of density derivatives probed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    /// Rungs of the `e^{-j}` ladder used for index profiles (j = 1..n).
    /// Heavy power-law tails can exhaust the adaptive quadrature on the
    /// full 40-rung ladder; fewer rungs still span plenty of decades.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_rungs: Option<usize>,
    /// Index powers for the `indices` and `char_probe` experiments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_list: Option<Vec<u32>>,
    /// Depth of the factorial frequency ladder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_freq: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Horizon offsets for `tv_continuity`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_list: Option<Vec<f64>>,
    /// Stretch amplitude for admissibility / derivative checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Mark-norm floor of the restricted class Γ in the second admissibility
    /// pair (clamped to `eps_cut`; omitted means Γ keeps every sampled mark).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_radius: Option<f64>,
    /// Direction-lattice resolution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir_grid: Option<usize>,
    /// Cone aperture.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub varrho: Option<f64>,
    /// Coordinate projected by univariate estimators.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coordinate: Option<usize>,
    /// Minimum fraction of nondegenerate Malliavin matrices.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_nondegenerate_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_regime: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_bounded: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_divergent: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_increasing: Option<bool>,
    /// Expected sup-density verdicts, aligned with the horizon list.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_trend: Option<Vec<String>>,
    /// Expected index classification (`indices` experiment, all entries).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_class: Option<String>,
}

impl Budgets {
    fn validate(&self) -> Result<(), CliError> {
        let positive = |name: &str, v: Option<f64>| -> Result<(), CliError> {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(CliError::Config(format!(
                        "budget '{name}' must be positive and finite, got {v}"
                    )));
                }
            }
            Ok(())
        };
        positive("eps_cut", self.eps_cut)?;
        positive("step", self.step)?;
        positive("burn_in", self.burn_in)?;
        positive("gamma_radius", self.gamma_radius)?;
        if let Some(eps) = self.eps_cut {
            if eps >= 1.0 {
                return Err(CliError::Config(format!(
                    "budget 'eps_cut' must lie in (0,1), got {eps}"
                )));
            }
        }
        if self.replicas == Some(0) {
            return Err(CliError::Config("budget 'replicas' must be positive".into()));
        }
        if let Some(rungs) = self.eps_rungs {
            if !(4..=40).contains(&rungs) {
                return Err(CliError::Config(format!(
                    "budget 'eps_rungs' must lie in 4..=40, got {rungs}"
                )));
            }
        }
        if let Some(deltas) = &self.delta_list {
            if deltas.is_empty() || deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(CliError::Config(
                    "budget 'delta_list' must be nonempty, positive and finite".into(),
                ));
            }
        }
        Ok(())
    }
}
