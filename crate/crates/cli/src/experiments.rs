//! Experiment implementations behind the scenario runner.
//!
//! Each experiment takes a validated [`Scenario`] plus the effective seed,
//! runs a deterministic computation, and returns a JSON `results` document
//! together with CSV plot tables.  Declared expectations (`expect_*`,
//! `expected_mean`, `min_nondegenerate_fraction`) are checked here; a failed
//! expectation aborts the scenario with [`CliError::Experiment`] naming the
//! violated invariant.
//!
//! Replica seeding: replica `j` of a labelled sampling stage derives its
//! configuration seed from `rng::stream(effective_seed, label, j)`, so
//! stages are mutually independent and reruns reproduce replica-for-replica.
//! Every parallel reduction collects per-replica values in index order
//! before a serial fold — results do not depend on the worker-thread count.

use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use levylab::diagnostics::{
    char_function_probe, density_estimate, factorial_frequencies, sup_density_probe,
    sup_density_trend, tv_distance, CharProbeRow, EstimateKind, RegimeInputs, RegularityReport,
    SupDensityRow,
};
use levylab::drift::{dissipativity_check, k_r_certificate, DriftField, DEFAULT_Y_RADII};
use levylab::levy_measure::{
    classify_index, classify_index_stable, default_eps_ladder, lower_index_profile,
    order_index_profile, wide_cone_check, IndexClass, IndexProfile, LevyMeasure, WideConeReport,
    DEFAULT_APERTURES, DEFAULT_MASS_THRESHOLD,
};
use levylab::point_measure_sim::{sample_configuration, CutoffScheme, PointConfiguration, PointEvent};
use levylab::rng::stream;
use levylab::sde::{
    derivative_process, malliavin_matrix, solve_endpoint, solve_path, stationary_sample,
    stochastic_exponent,
};
use levylab::variations::{
    admissibility_density, build_grid, finite_diff_derivative, time_stretch_map,
    transform_configuration, FdMode, GridParams, TimeStretch,
};
use levylab::DVector;

use crate::config::{ExperimentKind, MeasureKindTag, Scenario};
use crate::report::{
    char_probe_json, index_class_json, regime_json, sup_density_json, CsvTable, ExperimentOutput,
};
use crate::CliError;

/// Dispatch a scenario to its experiment implementation.
pub fn run_experiment(scenario: &Scenario, seed: u64) -> Result<ExperimentOutput, CliError> {
    match scenario.experiment {
        ExperimentKind::Indices => indices(scenario),
        ExperimentKind::WideCone => wide_cone(scenario),
        ExperimentKind::Admissibility => admissibility(scenario, seed),
        ExperimentKind::DerivativeCheck => derivative_check(scenario, seed),
        ExperimentKind::Malliavin => malliavin(scenario, seed),
        ExperimentKind::DensitySweep => density_sweep(scenario, seed),
        ExperimentKind::CharProbe => char_probe(scenario, seed),
        ExperimentKind::Stationary => stationary(scenario, seed),
        ExperimentKind::Regime => regime(scenario, seed),
        ExperimentKind::TvContinuity => tv_continuity(scenario, seed),
    }
}

fn fail(id: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Experiment(format!("scenario `{id}`: {msg}"))
}

/// Mean and standard error of a sample (unbiased variance).
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Horizons that may be `+∞` serialize as the string `"inf"` instead of
/// JSON's unrepresentable infinity.
fn horizon_json(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn check_expected_class(s: &Scenario, name: &str, class: &IndexClass) -> Result<(), CliError> {
    if let Some(expected) = &s.budgets.expect_class {
        if class.label() != expected {
            return Err(fail(
                &s.id,
                format!(
                    "index `{name}` classified as `{}`, expected `{expected}`",
                    class.label()
                ),
            ));
        }
    }
    Ok(())
}

/// Classify one upper order index across the default aperture sweep.
fn stable_upper_index(
    id: &str,
    measure: &LevyMeasure,
    power: u32,
    eps_list: &[f64],
    dir_grid: usize,
) -> Result<(Vec<IndexProfile>, IndexClass), CliError> {
    let profiles: Vec<IndexProfile> = DEFAULT_APERTURES
        .iter()
        .map(|&varrho| order_index_profile(measure, power, varrho, eps_list, dir_grid))
        .collect::<Result<_, _>>()
        .map_err(|e| fail(id, e))?;
    let class = classify_index_stable(&profiles).map_err(|e| fail(id, e))?;
    Ok((profiles, class))
}

fn push_profile_rows(rows: &mut Vec<String>, label: &str, profile: &IndexProfile) {
    let varrho = profile
        .varrho
        .map(|v| v.to_string())
        .unwrap_or_default();
    for &(eps, value) in &profile.points {
        rows.push(format!("{label},{varrho},{eps},{value}"));
    }
}

/// Draw endpoint samples `X_t[coordinate]` over independent replicas.
#[allow(clippy::too_many_arguments)]
fn endpoint_samples(
    id: &str,
    measure: &LevyMeasure,
    drift: &DriftField,
    scheme: &CutoffScheme,
    t: f64,
    step: f64,
    replicas: u64,
    coordinate: usize,
    seed: u64,
    label: &str,
) -> Result<Vec<f64>, CliError> {
    let x0 = DVector::zeros(drift.dim());
    (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let cfg_seed = stream(seed, label, rep).gen::<u64>();
            let config =
                sample_configuration(measure, (0.0, t), scheme.eps_cut, cfg_seed, None)
                    .map_err(|e| fail(id, e))?;
            let x = solve_endpoint(drift, &config, scheme, &x0, step).map_err(|e| fail(id, e))?;
            Ok(x[coordinate])
        })
        .collect()
}

/// Sums of one mark coordinate over the events of independent replicas —
/// the compound-Poisson part of the noise itself, no drift or compensator.
fn jump_sum_samples(
    id: &str,
    measure: &LevyMeasure,
    t: f64,
    eps_cut: f64,
    replicas: u64,
    coordinate: usize,
    seed: u64,
    label: &str,
) -> Result<Vec<f64>, CliError> {
    (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let cfg_seed = stream(seed, label, rep).gen::<u64>();
            let config = sample_configuration(measure, (0.0, t), eps_cut, cfg_seed, None)
                .map_err(|e| fail(id, e))?;
            Ok(config
                .events
                .iter()
                .map(|event| event.mark[coordinate])
                .sum::<f64>())
        })
        .collect()
}

/// The `e^{-j}` profile ladder, truncated when the scenario asks for fewer
/// rungs (heavy power-law tails can exhaust the quadrature much below the
/// support scale; a dozen rungs already span five decades).
fn eps_ladder_for(s: &Scenario) -> Vec<f64> {
    let ladder = default_eps_ladder();
    match s.budgets.eps_rungs {
        Some(rungs) => ladder[..rungs.min(ladder.len())].to_vec(),
        None => ladder,
    }
}

fn coordinate_for(s: &Scenario, dim: usize) -> Result<usize, CliError> {
    let coordinate = s.budgets.coordinate.unwrap_or(0);
    if coordinate >= dim {
        return Err(fail(
            &s.id,
            format!("coordinate {coordinate} out of range for dimension {dim}"),
        ));
    }
    Ok(coordinate)
}

fn wide_cone_json(report: &WideConeReport) -> Value {
    json!({
        "varrho": report.varrho,
        "floors": report.floors.to_vec(),
        "mass_threshold": report.mass_threshold,
        "all_divergent": report.all_divergent,
        "witness": report.witness.as_ref().map(|w| w.iter().copied().collect::<Vec<f64>>()),
        "directions_checked": report.per_direction.len(),
    })
}

// ---------------------------------------------------------------------------
// indices
// ---------------------------------------------------------------------------

/// Order-index profiles (upper indices `rho_q` over an aperture sweep, lower
/// index `theta`) with their classifications.
fn indices(s: &Scenario) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let powers = s.budgets.r_list.clone().unwrap_or_else(|| vec![1, 2]);
    let dir_grid = s.budgets.dir_grid.unwrap_or(16);
    let eps_list = eps_ladder_for(s);

    let mut rows = Vec::new();
    let mut upper = Vec::new();
    for &q in &powers {
        if q == 0 {
            return Err(fail(id, "index powers must be ≥ 1"));
        }
        let label = format!("rho_{q}");
        let (profiles, class) = stable_upper_index(id, &measure, q, &eps_list, dir_grid)?;
        for profile in &profiles {
            push_profile_rows(&mut rows, &label, profile);
        }
        check_expected_class(s, &label, &class)?;
        upper.push(json!({
            "index": label,
            "power": q,
            "classification": index_class_json(&class),
        }));
    }

    let theta_profile =
        lower_index_profile(&measure, &eps_list, dir_grid).map_err(|e| fail(id, e))?;
    push_profile_rows(&mut rows, "theta", &theta_profile);
    let theta = classify_index(&theta_profile).map_err(|e| fail(id, e))?;
    check_expected_class(s, "theta", &theta)?;

    Ok(ExperimentOutput {
        results: json!({
            "dir_grid": dir_grid,
            "eps_ladder": { "count": eps_list.len(), "first": eps_list[0], "last": eps_list[eps_list.len() - 1] },
            "upper_indices": upper,
            "theta": index_class_json(&theta),
        }),
        tables: vec![CsvTable {
            name: "profiles".into(),
            header: "index,varrho,eps,value".into(),
            rows,
        }],
    })
}

// ---------------------------------------------------------------------------
// wide_cone
// ---------------------------------------------------------------------------

/// Directional cone-mass divergence check with witness reporting.
fn wide_cone(s: &Scenario) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let varrho = s.budgets.varrho.unwrap_or(0.5);
    let dir_grid = s.budgets.dir_grid.unwrap_or(16);
    let report = wide_cone_check(&measure, varrho, dir_grid, DEFAULT_MASS_THRESHOLD)
        .map_err(|e| fail(id, e))?;

    if let Some(expected) = s.budgets.expect_divergent {
        if report.all_divergent != expected {
            return Err(fail(
                id,
                format!(
                    "wide-cone divergence is {}, expected {}",
                    report.all_divergent, expected
                ),
            ));
        }
    }

    let rows = report
        .per_direction
        .iter()
        .map(|v| {
            let axis = v
                .axis
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            format!(
                "{axis},{},{},{},{},{}",
                v.masses[0], v.masses[1], v.masses[2], v.masses[3], v.divergent
            )
        })
        .collect();

    Ok(ExperimentOutput {
        results: wide_cone_json(&report),
        tables: vec![CsvTable {
            name: "cone_masses".into(),
            header: "axis,mass_floor0,mass_floor1,mass_floor2,mass_floor3,divergent".into(),
            rows,
        }],
    })
}

// ---------------------------------------------------------------------------
// admissibility
// ---------------------------------------------------------------------------

type Functional = fn(&PointConfiguration) -> f64;

/// Bounded test functionals of a configuration, sensitive to event count,
/// mark sizes, and jump times respectively.
const FUNCTIONALS: [(&str, Functional); 3] = [
    ("exp_neg_count", |c| (-(c.events.len() as f64)).exp()),
    ("exp_neg_mark_sum", |c| {
        (-c.events.iter().map(|e| e.mark.norm()).sum::<f64>()).exp()
    }),
    ("sin_first_time", |c| {
        c.events.first().map_or(0.0, |e| e.time.sin())
    }),
];

/// Marks with norm above `radius` belong to Γ; `None` keeps every sampled
/// mark.  Strict `>` matches both the sampler's cutoff and `mass_above`, so
/// the predicate and the mass `Π(Γ)` agree exactly on atoms.
fn in_gamma(radius: Option<f64>, event: &PointEvent) -> bool {
    radius.map_or(true, |r| event.mark.norm() > r)
}

/// Restriction of a configuration to the observation window `[0, t]`.
fn restrict_to(config: &PointConfiguration, t: f64) -> PointConfiguration {
    PointConfiguration {
        window: (config.window.0, t),
        events: config
            .events
            .iter()
            .filter(|e| e.time <= t)
            .cloned()
            .collect(),
        eps_cut: config.eps_cut,
        rng_seed: config.rng_seed,
    }
}

/// Monte-Carlo check of the change-of-variables identity
/// `E[φ(T_h θ)] = E[p_h · φ(θ)]` for two (stretch, Γ) pairs and three
/// bounded functionals, plus the normalization `E[p_h] = 1`.
fn admissibility(s: &Scenario, seed: u64) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let t = s.horizons()?[0];
    let replicas = s.budgets.replicas.unwrap_or(100_000);
    let eps_cut = s.budgets.eps_cut.unwrap_or(0.25);
    let amplitude = s.budgets.amplitude.unwrap_or(0.5);
    let gamma_radius = s.budgets.gamma_radius.map(|r| r.max(eps_cut));

    let pairs = [
        (
            "boxcar_early",
            TimeStretch::boxcar(0.1 * t, 0.5 * t, 1.0)
                .map_err(|e| fail(id, e))?
                .scaled(amplitude),
            None,
        ),
        (
            "boxcar_late",
            TimeStretch::boxcar(0.45 * t, 0.9 * t, 2.0)
                .map_err(|e| fail(id, e))?
                .scaled(-0.6 * amplitude),
            gamma_radius,
        ),
    ];
    let gamma_masses: Vec<f64> = pairs
        .iter()
        .map(|(_, _, radius)| measure.mass_above(radius.unwrap_or(eps_cut)))
        .collect::<Result<_, _>>()
        .map_err(|e| fail(id, e))?;

    // The identity lives on the unbounded time axis: the flow can pull
    // events into [0, t] from beyond t, and the rate r_h of a negative
    // stretch stays nonzero past its support.  Sample a window covering
    // both, transform the full configuration, and evaluate the functionals
    // on the restriction to [0, t].
    let w_end = pairs
        .iter()
        .map(|(_, h, _)| time_stretch_map(h, 1.0, t).max(h.support().1 + h.c_infinity().abs()))
        .fold(t, f64::max);

    // Per replica and pair: the density p and the coupled differences
    // φ(T_h θ)|_[0,t] − p·φ(θ)|_[0,t] for each functional, in replica order.
    let per_replica: Vec<[(f64, [f64; 3]); 2]> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let cfg_seed = stream(seed, "admissibility", rep).gen::<u64>();
            let config = sample_configuration(&measure, (0.0, w_end), eps_cut, cfg_seed, None)
                .map_err(|e| fail(id, e))?;
            let base = restrict_to(&config, t);
            let mut out = [(0.0, [0.0; 3]); 2];
            for (slot, (_, stretch, radius)) in pairs.iter().enumerate() {
                let p =
                    admissibility_density(&config, stretch, |e| in_gamma(*radius, e), gamma_masses[slot]);
                let moved = restrict_to(
                    &transform_configuration(&config, stretch, |e| in_gamma(*radius, e), 1.0),
                    t,
                );
                let mut diffs = [0.0; 3];
                for (k, (_, phi)) in FUNCTIONALS.iter().enumerate() {
                    diffs[k] = phi(&moved) - p * phi(&base);
                }
                out[slot] = (p, diffs);
            }
            Ok(out)
        })
        .collect::<Result<_, CliError>>()?;

    let mut identity_rows = Vec::new();
    let mut density_rows = Vec::new();
    let mut identity_json = Vec::new();
    let mut density_json = Vec::new();
    for (slot, (stretch_name, stretch, radius)) in pairs.iter().enumerate() {
        let ps: Vec<f64> = per_replica.iter().map(|r| r[slot].0).collect();
        let (p_mean, p_se) = mean_se(&ps);
        if (p_mean - 1.0).abs() > 4.0 * p_se + 1e-12 {
            return Err(fail(
                id,
                format!(
                    "density normalization violated for `{stretch_name}`: E[p] = {p_mean} ± {p_se}"
                ),
            ));
        }
        density_rows.push(format!("{stretch_name},{p_mean},{p_se}"));
        density_json.push(json!({
            "stretch": stretch_name,
            "amplitude": stretch.amplitude(),
            "support": stretch.support(),
            "gamma_radius": radius,
            "gamma_mass": gamma_masses[slot],
            "mean_density": p_mean,
            "se_density": p_se,
        }));
        for (k, (phi_name, _)) in FUNCTIONALS.iter().enumerate() {
            let diffs: Vec<f64> = per_replica.iter().map(|r| r[slot].1[k]).collect();
            let (d_mean, d_se) = mean_se(&diffs);
            if d_mean.abs() > 4.0 * d_se + 1e-12 {
                return Err(fail(
                    id,
                    format!(
                        "change-of-variables identity violated for `{stretch_name}`/`{phi_name}`: \
                         mean difference {d_mean} ± {d_se}"
                    ),
                ));
            }
            identity_rows.push(format!("{stretch_name},{phi_name},{d_mean},{d_se}"));
            identity_json.push(json!({
                "stretch": stretch_name,
                "functional": phi_name,
                "mean_diff": d_mean,
                "se_diff": d_se,
            }));
        }
    }

    Ok(ExperimentOutput {
        results: json!({
            "t": t,
            "eps_cut": eps_cut,
            "window_end": w_end,
            "replicas": replicas,
            "identity": identity_json,
            "density": density_json,
        }),
        tables: vec![
            CsvTable {
                name: "identity".into(),
                header: "stretch,functional,mean_diff,se_diff".into(),
                rows: identity_rows,
            },
            CsvTable {
                name: "density".into(),
                header: "stretch,mean_density,se_density".into(),
                rows: density_rows,
            },
        ],
    })
}

// ---------------------------------------------------------------------------
// derivative_check
// ---------------------------------------------------------------------------

/// Variational derivative of the endpoint along a time stretch: the
/// derivative-process value against one-sided finite differences, with the
/// Richardson slope certifying first-order convergence.
fn derivative_check(s: &Scenario, seed: u64) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let drift = s.build_drift(measure.dim())?;
    let t = s.horizons()?[0];
    let n_configs = s.budgets.replicas.unwrap_or(20);
    let eps_cut = s.budgets.eps_cut.unwrap_or(0.25);
    let step = s.budgets.step.unwrap_or(1e-3);
    let amplitude = s.budgets.amplitude.unwrap_or(0.5);
    let scheme = CutoffScheme::drop_mode(&measure, eps_cut).map_err(|e| fail(id, e))?;
    let x0 = DVector::zeros(drift.dim());
    let stretch = TimeStretch::boxcar(0.25 * t, 0.75 * t, 1.0)
        .map_err(|e| fail(id, e))?
        .scaled(amplitude);
    let fd_steps = [1e-2, 1e-3, 1e-4];

    // Condition on at least one retained jump; without any event the
    // variation acts trivially and both derivatives vanish identically.
    let mut configs = Vec::with_capacity(n_configs as usize);
    let mut attempt: u64 = 0;
    while (configs.len() as u64) < n_configs && attempt < 50 * n_configs {
        let cfg_seed = stream(seed, "derivative", attempt).gen::<u64>();
        let config = sample_configuration(&measure, (0.0, t), eps_cut, cfg_seed, None)
            .map_err(|e| fail(id, e))?;
        if !config.events.is_empty() {
            configs.push(config);
        }
        attempt += 1;
    }
    if (configs.len() as u64) < n_configs {
        return Err(fail(
            id,
            format!(
                "could not draw {n_configs} configurations with events in {attempt} attempts; \
                 the cutoff retains too little mass"
            ),
        ));
    }

    let checks: Vec<(usize, f64, f64, f64)> = configs
        .par_iter()
        .map(|config| {
            let mut path =
                solve_path(&drift, config, &scheme, &x0, step).map_err(|e| fail(id, e))?;
            stochastic_exponent(&mut path, &drift).map_err(|e| fail(id, e))?;
            let derivative = derivative_process(&path, &drift, &stretch, |_| true)
                .map_err(|e| fail(id, e))?
                .pop()
                .ok_or_else(|| fail(id, "empty derivative process"))?;
            let endpoint = |cfg: &PointConfiguration| {
                solve_endpoint(&drift, cfg, &scheme, &x0, step)
                    .unwrap_or_else(|_| DVector::from_element(drift.dim(), f64::NAN))
            };
            let fd = finite_diff_derivative(
                endpoint,
                config,
                &stretch,
                |_| true,
                &fd_steps,
                FdMode::OneSided,
            )
            .map_err(|e| fail(id, e))?;
            let rel_err =
                (&fd.derivative - &derivative).norm() / derivative.norm().max(1e-9);
            Ok((
                config.events.len(),
                derivative.norm(),
                fd.richardson_slope,
                rel_err,
            ))
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::new();
    for (idx, &(events, norm, slope, rel_err)) in checks.iter().enumerate() {
        if !(0.8..=1.2).contains(&slope) {
            return Err(fail(
                id,
                format!("configuration {idx}: Richardson slope {slope} outside [0.8, 1.2]"),
            ));
        }
        if norm > 1e-8 && rel_err > 0.02 {
            return Err(fail(
                id,
                format!(
                    "configuration {idx}: finite differences deviate from the derivative \
                     process by {rel_err} relative"
                ),
            ));
        }
        rows.push(format!("{idx},{events},{norm},{slope},{rel_err}"));
    }
    let slopes: Vec<f64> = checks.iter().map(|c| c.2).collect();
    let (slope_mean, _) = mean_se(&slopes);

    Ok(ExperimentOutput {
        results: json!({
            "t": t,
            "eps_cut": eps_cut,
            "step": step,
            "fd_steps": fd_steps.to_vec(),
            "configurations": checks.len(),
            "slope_mean": slope_mean,
            "slope_min": slopes.iter().cloned().fold(f64::INFINITY, f64::min),
            "slope_max": slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            "max_rel_err": checks.iter().map(|c| c.3).fold(0.0f64, f64::max),
        }),
        tables: vec![CsvTable {
            name: "derivatives".into(),
            header: "config,events,derivative_norm,richardson_slope,rel_err".into(),
            rows,
        }],
    })
}

// ---------------------------------------------------------------------------
// malliavin
// ---------------------------------------------------------------------------

/// Grid-cell Malliavin covariance over replicas: fraction of replicas
/// (conditioned on at least one retained jump) whose matrix is
/// non-degenerate, with the smallest-eigenvalue distribution.
fn malliavin(s: &Scenario, seed: u64) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let drift = s.build_drift(measure.dim())?;
    let t = s.horizons()?[0];
    let replicas = s.budgets.replicas.unwrap_or(1000);
    let eps_cut = s.budgets.eps_cut.unwrap_or(1e-3);
    let step = s.budgets.step.unwrap_or(1e-3);
    let threshold = s.budgets.min_nondegenerate_fraction.unwrap_or(0.99);
    if eps_cut < 1e-5 {
        return Err(CliError::Config(format!(
            "scenario `{id}`: malliavin needs eps_cut ≥ 1e-5 — the differential grid \
             materializes one annulus per 1/eps_cut"
        )));
    }
    let grid = build_grid(
        &measure,
        &GridParams {
            horizon: t,
            eps_floor: eps_cut,
            ..GridParams::default()
        },
    )
    .map_err(|e| fail(id, e))?;
    let scheme = scheme_for(&measure, eps_cut, id)?;
    let x0 = DVector::zeros(drift.dim());

    let outcomes: Vec<Option<(usize, f64, bool)>> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let cfg_seed = stream(seed, "malliavin", rep).gen::<u64>();
            let config = sample_configuration(&measure, (0.0, t), eps_cut, cfg_seed, None)
                .map_err(|e| fail(id, e))?;
            if config.events.is_empty() {
                return Ok(None);
            }
            let mut path = solve_path(&drift, &config, &scheme, &x0, step)
                .map_err(|e| fail(id, e))?;
            stochastic_exponent(&mut path, &drift).map_err(|e| fail(id, e))?;
            let matrix = malliavin_matrix(&path, &grid).map_err(|e| fail(id, e))?;
            Ok(Some((
                config.events.len(),
                matrix.lambda_min,
                matrix.nondegenerate,
            )))
        })
        .collect::<Result<_, CliError>>()?;

    let conditioned: Vec<&(usize, f64, bool)> = outcomes.iter().flatten().collect();
    if conditioned.is_empty() {
        return Err(fail(id, "no replica produced a retained jump"));
    }
    let nondegenerate = conditioned.iter().filter(|c| c.2).count();
    let fraction = nondegenerate as f64 / conditioned.len() as f64;
    if fraction < threshold {
        return Err(fail(
            id,
            format!(
                "non-degenerate fraction {fraction:.4} below the required {threshold} \
                 ({nondegenerate}/{} conditioned replicas)",
                conditioned.len()
            ),
        ));
    }
    let mut lambdas: Vec<f64> = conditioned.iter().map(|c| c.1).collect();
    lambdas.sort_by(f64::total_cmp);
    let rows = outcomes
        .iter()
        .enumerate()
        .filter_map(|(rep, o)| {
            o.as_ref()
                .map(|(events, lambda, nd)| format!("{rep},{events},{lambda},{nd}"))
        })
        .collect();

    Ok(ExperimentOutput {
        results: json!({
            "t": t,
            "eps_cut": eps_cut,
            "step": step,
            "replicas": replicas,
            "conditioned": conditioned.len(),
            "nondegenerate_fraction": fraction,
            "lambda_min": {
                "min": lambdas[0],
                "median": lambdas[lambdas.len() / 2],
                "max": lambdas[lambdas.len() - 1],
            },
        }),
        tables: vec![CsvTable {
            name: "matrices".into(),
            header: "replica,events,lambda_min,nondegenerate".into(),
            rows,
        }],
    })
}

/// Build the drop-mode cutoff scheme (shared by the path-based experiments).
fn scheme_for(measure: &LevyMeasure, eps_cut: f64, id: &str) -> Result<CutoffScheme, CliError> {
    CutoffScheme::drop_mode(measure, eps_cut).map_err(|e| fail(id, e))
}

// ---------------------------------------------------------------------------
// density_sweep
// ---------------------------------------------------------------------------

/// Endpoint-density estimates across horizons with the bandwidth-halving
/// boundedness probe at each horizon.
fn density_sweep(s: &Scenario, seed: u64) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let drift = s.build_drift(measure.dim())?;
    let horizons = s.horizons()?;
    let replicas = s.budgets.replicas.unwrap_or(10_000);
    let eps_cut = s.budgets.eps_cut.unwrap_or(1e-3);
    let step = s.budgets.step.unwrap_or(1e-2);
    let coordinate = coordinate_for(s, drift.dim())?;
    let scheme = scheme_for(&measure, eps_cut, id)?;

    let mut by_horizon = Vec::with_capacity(horizons.len());
    for (i, &t) in horizons.iter().enumerate() {
        let label = format!("density-sweep-{i}");
        let samples = endpoint_samples(
            id, &measure, &drift, &scheme, t, step, replicas, coordinate, seed, &label,
        )?;
        by_horizon.push((t, samples));
    }
    let trend = sup_density_trend(&by_horizon).map_err(|e| fail(id, e))?;
    check_expected_trend(s, &trend)?;

    let mut density_rows = Vec::new();
    for (t, samples) in &by_horizon {
        let estimate = density_estimate(
            samples,
            EstimateKind::Kde {
                bandwidth: None,
                range: None,
            },
        )
        .map_err(|e| fail(id, e))?;
        for (x, v) in estimate.centers().into_iter().zip(estimate.values()) {
            density_rows.push(format!("{t},{x},{v}"));
        }
    }
    let trend_rows = trend
        .iter()
        .map(|row| {
            format!(
                "{},{},{},{},{},{},{},{}",
                row.t,
                row.probe.bandwidths[0],
                row.probe.bandwidths[1],
                row.probe.bandwidths[2],
                row.probe.max_values[0],
                row.probe.max_values[1],
                row.probe.max_values[2],
                row.probe.verdict.label(),
            )
        })
        .collect();

    Ok(ExperimentOutput {
        results: json!({
            "eps_cut": eps_cut,
            "step": step,
            "replicas": replicas,
            "coordinate": coordinate,
            "sup_density": sup_density_json(&trend),
        }),
        tables: vec![
            CsvTable {
                name: "trend".into(),
                header: "t,h0,h1,h2,max0,max1,max2,verdict".into(),
                rows: trend_rows,
            },
            CsvTable {
                name: "density".into(),
                header: "t,x,density".into(),
                rows: density_rows,
            },
        ],
    })
}

fn check_expected_trend(s: &Scenario, trend: &[SupDensityRow]) -> Result<(), CliError> {
    if let Some(expected) = &s.budgets.expect_trend {
        if expected.len() != trend.len() {
            return Err(fail(
                &s.id,
                format!(
                    "expect_trend lists {} verdicts but {} horizons were probed",
                    expected.len(),
                    trend.len()
                ),
            ));
        }
        for (row, want) in trend.iter().zip(expected) {
            let got = row.probe.verdict.label();
            if got != want {
                return Err(fail(
                    &s.id,
                    format!("sup-density verdict at t = {} is `{got}`, expected `{want}`", row.t),
                ));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// char_probe
// ---------------------------------------------------------------------------

/// Empirical characteristic function of the jump sum on the factorial
/// frequency ladder `z_N = 2πN!`, with the truncated analytic modulus as an
/// oracle for factorial-atom measures, plus index classifications.
fn char_probe(s: &Scenario, seed: u64) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let t = s.horizons()?[0];
    let replicas = s.budgets.replicas.unwrap_or(100_000);
    let eps_cut = s.budgets.eps_cut.unwrap_or(1e-9);
    let n_freq = s.budgets.n_freq.unwrap_or(7);
    let coordinate = coordinate_for(s, measure.dim())?;

    let samples = jump_sum_samples(
        id, &measure, t, eps_cut, replicas, coordinate, seed, "char-probe",
    )?;
    let freqs = factorial_frequencies(n_freq).map_err(|e| fail(id, e))?;
    let probe = char_function_probe(&samples, &freqs).map_err(|e| fail(id, e))?;

    // For factorial atoms the modulus has a closed form: atoms below the
    // cutoff vanish from the sum, frequencies z_N kill every atom with
    // n ≤ N, and the rest contribute exp{t·n(cos(2πN!/n!) − 1)}.
    let oracle = if matches!(s.measure.kind, MeasureKindTag::FactorialAtoms) {
        let n_max = s.measure.n_max.unwrap_or(0);
        Some(factorial_oracle(t, eps_cut, n_max, n_freq))
    } else {
        None
    };
    if let Some(oracle) = &oracle {
        for (row, &expected) in probe.iter().zip(oracle) {
            if (row.modulus - expected).abs() > 4.0 * row.std_error {
                return Err(fail(
                    id,
                    format!(
                        "modulus at z = {} is {} but the analytic value is {expected} \
                         (4σ = {})",
                        row.z,
                        row.modulus,
                        4.0 * row.std_error
                    ),
                ));
            }
        }
    }
    if s.budgets.expect_increasing == Some(true) {
        // The informative rungs: below N = 4 successive moduli differ by
        // less than Monte-Carlo noise at any realistic replica count.
        let start = 3.min(probe.len().saturating_sub(1));
        for pair in probe[start..].windows(2) {
            if pair[1].modulus <= pair[0].modulus {
                return Err(fail(
                    id,
                    format!(
                        "modulus ladder not increasing: |φ({})| = {} ≥ |φ({})| = {}",
                        pair[0].z, pair[0].modulus, pair[1].z, pair[1].modulus
                    ),
                ));
            }
        }
    }

    let powers = s.budgets.r_list.clone().unwrap_or_else(|| vec![1, 2, 4]);
    let dir_grid = s.budgets.dir_grid.unwrap_or(16);
    let eps_ladder = eps_ladder_for(s);
    let mut classifications = Vec::new();
    for &q in &powers {
        let (_, class) = stable_upper_index(id, &measure, q, &eps_ladder, dir_grid)?;
        check_expected_class(s, &format!("rho_{q}"), &class)?;
        classifications.push(json!({
            "index": format!("rho_{q}"),
            "power": q,
            "classification": index_class_json(&class),
        }));
    }

    let rows = probe
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let oracle_cell = oracle
                .as_ref()
                .map(|o| o[i].to_string())
                .unwrap_or_default();
            format!(
                "{},{},{},{},{oracle_cell}",
                i + 1,
                row.z,
                row.modulus,
                row.std_error
            )
        })
        .collect();

    Ok(ExperimentOutput {
        results: json!({
            "t": t,
            "eps_cut": eps_cut,
            "replicas": replicas,
            "target": "jump-sum",
            "probe": char_probe_json(&probe),
            "oracle": oracle,
            "indices": classifications,
        }),
        tables: vec![CsvTable {
            name: "char_probe".into(),
            header: "n,z,modulus,std_error,oracle".into(),
            rows,
        }],
    })
}

/// Truncated analytic modulus `|φ(2πN!)|` of the factorial-atom jump sum on
/// a window of length `t` with atoms below `eps_cut` dropped.
fn factorial_oracle(t: f64, eps_cut: f64, n_max: usize, n_freq: u32) -> Vec<f64> {
    // Largest retained atom index: 1/n! ≥ eps_cut, capped at the measure's
    // truncation.
    let mut n_keep = 0usize;
    let mut factorial = 1.0f64;
    for n in 1..=n_max {
        factorial *= n as f64;
        if 1.0 / factorial < eps_cut {
            break;
        }
        n_keep = n;
    }
    (1..=n_freq as usize)
        .map(|cap| {
            let mut exponent = 0.0;
            // Running ratio N!/n! = 1/((N+1)(N+2)…n) avoids overflowing
            // factorials; terms with n ≤ N vanish since N!/n! is integral.
            let mut ratio = 1.0f64;
            for n in cap + 1..=n_keep {
                ratio /= n as f64;
                let angle = std::f64::consts::TAU * ratio;
                exponent += t * n as f64 * (angle.cos() - 1.0);
            }
            exponent.exp()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// stationary
// ---------------------------------------------------------------------------

/// Long-run endpoint sampling after a dissipativity-calibrated burn-in:
/// per-coordinate moments and the boundedness probe of the invariant law.
fn stationary(s: &Scenario, seed: u64) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let drift = s.build_drift(measure.dim())?;
    let replicas = s.budgets.replicas.unwrap_or(10_000);
    let eps_cut = s.budgets.eps_cut.unwrap_or(0.1);
    let step = s.budgets.step.unwrap_or(1e-2);
    let coordinate = coordinate_for(s, drift.dim())?;
    let scheme = scheme_for(&measure, eps_cut, id)?;

    let sample = stationary_sample(
        &drift,
        &measure,
        &scheme,
        s.budgets.burn_in,
        replicas as usize,
        seed,
        step,
    )
    .map_err(|e| fail(id, e))?;

    let dim = drift.dim();
    let mut means = Vec::with_capacity(dim);
    let mut ses = Vec::with_capacity(dim);
    let mut vars = Vec::with_capacity(dim);
    for c in 0..dim {
        let xs: Vec<f64> = sample.samples.iter().map(|x| x[c]).collect();
        let (mean, se) = mean_se(&xs);
        means.push(mean);
        ses.push(se);
        vars.push(se * se * xs.len() as f64);
    }
    if let Some(expected) = &s.budgets.expected_mean {
        if expected.len() != dim {
            return Err(fail(
                id,
                format!("expected_mean has {} entries for dimension {dim}", expected.len()),
            ));
        }
        for c in 0..dim {
            if (means[c] - expected[c]).abs() > 4.0 * ses[c] + 1e-12 {
                return Err(fail(
                    id,
                    format!(
                        "stationary mean[{c}] = {} ± {} but {} was expected",
                        means[c], ses[c], expected[c]
                    ),
                ));
            }
        }
    }

    let xs: Vec<f64> = sample.samples.iter().map(|x| x[coordinate]).collect();
    let probe = sup_density_probe(&xs).map_err(|e| fail(id, e))?;
    if let Some(bounded) = s.budgets.expect_bounded {
        let want = if bounded { "bounded-like" } else { "unbounded-like" };
        if probe.verdict.label() != want {
            return Err(fail(
                id,
                format!(
                    "invariant-density probe says `{}`, expected `{want}`",
                    probe.verdict.label()
                ),
            ));
        }
    }

    // Descriptive context: does the noise satisfy the wide-cone condition?
    let cone = wide_cone_check(&measure, 0.5, 8, DEFAULT_MASS_THRESHOLD)
        .map_err(|e| fail(id, e))?;

    let rows = (0..dim)
        .map(|c| format!("{c},{},{},{}", means[c], ses[c], vars[c]))
        .collect();
    let probe_row = SupDensityRow {
        t: sample.burn_in,
        probe: probe.clone(),
    };

    Ok(ExperimentOutput {
        results: json!({
            "eps_cut": eps_cut,
            "step": step,
            "replicas": replicas,
            "burn_in": sample.burn_in,
            "gamma_estimate": sample.gamma_estimate,
            "dissipative": sample.dissipative,
            "wide_cone_divergent": cone.all_divergent,
            "mean": means,
            "se": ses,
            "variance": vars,
            "coordinate": coordinate,
            "sup_density": sup_density_json(std::slice::from_ref(&probe_row)),
        }),
        tables: vec![CsvTable {
            name: "moments".into(),
            header: "coordinate,mean,se,variance".into(),
            rows,
        }],
    })
}

// ---------------------------------------------------------------------------
// regime
// ---------------------------------------------------------------------------

/// The full regularity pipeline: index classifications, drift certificate,
/// wide-cone and dissipativity checks, threshold horizons, the regime
/// verdict, and optional empirical probes.
fn regime(s: &Scenario, seed: u64) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let drift = s.build_drift(measure.dim())?;
    let m = measure.dim();
    let r = s.budgets.r.unwrap_or(1);
    let k = s.budgets.k.unwrap_or(0);
    let varrho = s.budgets.varrho.unwrap_or(0.25);
    let dir_grid = s.budgets.dir_grid.unwrap_or(16);
    let eps_ladder = eps_ladder_for(s);
    if r == 0 {
        return Err(fail(id, "moment order r must be ≥ 1"));
    }

    let (_, rho_2r) = stable_upper_index(id, &measure, 2 * r, &eps_ladder, dir_grid)?;
    let rho_1 = if m == 1 {
        Some(stable_upper_index(id, &measure, 1, &eps_ladder, dir_grid)?.1)
    } else {
        None
    };
    let theta_profile =
        lower_index_profile(&measure, &eps_ladder, dir_grid).map_err(|e| fail(id, e))?;
    let theta = classify_index(&theta_profile).map_err(|e| fail(id, e))?;

    let cert = k_r_certificate(&drift, r, varrho, 2.0, 32, 32, &DEFAULT_Y_RADII)
        .map_err(|e| fail(id, e))?;
    let kr_passes: Vec<u32> = if cert.pass { vec![r] } else { Vec::new() };
    let cone = wide_cone_check(&measure, varrho, dir_grid, DEFAULT_MASS_THRESHOLD)
        .map_err(|e| fail(id, e))?;
    let dissipativity = dissipativity_check(&drift, 1.0, 32).map_err(|e| fail(id, e))?;

    // Optional empirical probes alongside the analytic classification.
    let mut sup_rows = Vec::new();
    if let Some(horizon) = &s.horizon {
        let replicas = s.budgets.replicas.unwrap_or(5000);
        let eps_cut = s.budgets.eps_cut.unwrap_or(1e-3);
        let step = s.budgets.step.unwrap_or(1e-2);
        let coordinate = coordinate_for(s, drift.dim())?;
        let scheme = scheme_for(&measure, eps_cut, id)?;
        let mut by_horizon = Vec::new();
        for (i, &t) in horizon.resolve()?.iter().enumerate() {
            let label = format!("regime-trend-{i}");
            let samples = endpoint_samples(
                id, &measure, &drift, &scheme, t, step, replicas, coordinate, seed, &label,
            )?;
            by_horizon.push((t, samples));
        }
        sup_rows = sup_density_trend(&by_horizon).map_err(|e| fail(id, e))?;
        check_expected_trend(s, &sup_rows)?;
    }
    let mut char_rows: Vec<CharProbeRow> = Vec::new();
    if let Some(n_freq) = s.budgets.n_freq {
        let replicas = s.budgets.replicas.unwrap_or(5000);
        let eps_cut = s.budgets.eps_cut.unwrap_or(1e-3);
        let coordinate = coordinate_for(s, measure.dim())?;
        let t = s.horizons()?[0];
        let samples = jump_sum_samples(
            id, &measure, t, eps_cut, replicas, coordinate, seed, "regime-char",
        )?;
        let freqs = factorial_frequencies(n_freq).map_err(|e| fail(id, e))?;
        char_rows = char_function_probe(&samples, &freqs).map_err(|e| fail(id, e))?;
    }

    let inputs = RegimeInputs {
        kr_passes: &kr_passes,
        r,
        k,
        m,
        rho_2r: &rho_2r,
        rho_1: rho_1.as_ref(),
        theta: &theta,
        wide_cone_divergent: cone.all_divergent,
        dissipative: dissipativity.holds,
    };
    let report = RegularityReport::assemble(id.clone(), &inputs, sup_rows, char_rows)
        .map_err(|e| fail(id, e))?;

    if let Some(expected) = &s.budgets.expect_regime {
        if report.regime.tag() != expected {
            return Err(fail(
                id,
                format!(
                    "regime classified as `{}` ({}), expected `{expected}`",
                    report.regime.tag(),
                    report.regime
                ),
            ));
        }
    }

    let threshold_rows = vec![
        format!("t_star,{}", report.smoothness.t_star),
        format!("no_cb0_below,{}", report.irregularity.no_cb0_below),
    ];
    let trend_rows = report
        .sup_density
        .iter()
        .map(|row| format!("{},{}", row.t, row.probe.verdict.label()))
        .collect();

    Ok(ExperimentOutput {
        results: json!({
            "m": m,
            "r": r,
            "k": k,
            "varrho": varrho,
            "rho_2r": index_class_json(&report.rho_2r),
            "rho_1": report.rho_1.as_ref().map(index_class_json),
            "theta": index_class_json(&report.theta),
            "certificate": {
                "r": cert.r,
                "pass": cert.pass,
                "constant": cert.constant,
                "warnings": cert.warnings.len(),
            },
            "wide_cone_divergent": cone.all_divergent,
            "dissipative": dissipativity.holds,
            "gamma_estimate": dissipativity.gamma_estimate,
            "smoothness": {
                "c_km": report.smoothness.c_km,
                "t_star": horizon_json(report.smoothness.t_star),
                "ladder": report.smoothness.ladder,
            },
            "irregularity": {
                "no_lr_below": report.irregularity.no_lr_below.iter()
                    .map(|(rr, h)| json!({ "r": rr, "below": horizon_json(*h) }))
                    .collect::<Vec<_>>(),
                "no_cb0_below": horizon_json(report.irregularity.no_cb0_below),
                "no_cbk_below": report.irregularity.no_cbk_below.iter()
                    .map(|(kk, h)| json!({ "k": kk, "below": horizon_json(*h) }))
                    .collect::<Vec<_>>(),
            },
            "regime": regime_json(&report.regime),
            "sup_density": sup_density_json(&report.sup_density),
            "char_probe": char_probe_json(&report.char_probe),
        }),
        tables: vec![
            CsvTable {
                name: "thresholds".into(),
                header: "quantity,value".into(),
                rows: threshold_rows,
            },
            CsvTable {
                name: "trend".into(),
                header: "t,verdict".into(),
                rows: trend_rows,
            },
        ],
    })
}

// ---------------------------------------------------------------------------
// tv_continuity
// ---------------------------------------------------------------------------

/// Total-variation distance between endpoint histograms at `t` and `t + δ`
/// on a shared lattice, for a ladder of shrinking δ.
fn tv_continuity(s: &Scenario, seed: u64) -> Result<ExperimentOutput, CliError> {
    let id = &s.id;
    let measure = s.build_measure()?;
    let drift = s.build_drift(measure.dim())?;
    let t = s.horizons()?[0];
    let deltas = s
        .budgets
        .delta_list
        .clone()
        .unwrap_or_else(|| vec![0.4, 0.2, 0.1, 0.05]);
    let replicas = s.budgets.replicas.unwrap_or(10_000);
    let eps_cut = s.budgets.eps_cut.unwrap_or(1e-3);
    let step = s.budgets.step.unwrap_or(1e-2);
    let bins = s.budgets.bins.unwrap_or(64);
    let coordinate = coordinate_for(s, drift.dim())?;
    let scheme = scheme_for(&measure, eps_cut, id)?;

    let base = endpoint_samples(
        id, &measure, &drift, &scheme, t, step, replicas, coordinate, seed, "tv-base",
    )?;
    let mut shifted = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let label = format!("tv-shift-{i}");
        shifted.push(endpoint_samples(
            id,
            &measure,
            &drift,
            &scheme,
            t + delta,
            step,
            replicas,
            coordinate,
            seed,
            &label,
        )?);
    }

    // One lattice for every histogram so the distances are comparable.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in base.iter().chain(shifted.iter().flatten()) {
        lo = lo.min(*x);
        hi = hi.max(*x);
    }
    let kind = EstimateKind::Histogram {
        bins,
        range: Some((lo, hi)),
    };
    let base_hist = density_estimate(&base, kind.clone()).map_err(|e| fail(id, e))?;
    let mut rows = Vec::new();
    let mut distances = Vec::new();
    for (i, samples) in shifted.iter().enumerate() {
        let hist = density_estimate(samples, kind.clone()).map_err(|e| fail(id, e))?;
        let tv = tv_distance(&base_hist, &hist).map_err(|e| fail(id, e))?;
        rows.push(format!("{},{tv}", deltas[i]));
        distances.push(json!({ "delta": deltas[i], "tv": tv }));
    }

    Ok(ExperimentOutput {
        results: json!({
            "t": t,
            "eps_cut": eps_cut,
            "step": step,
            "replicas": replicas,
            "bins": bins,
            "range": [lo, hi],
            "distances": distances,
        }),
        tables: vec![CsvTable {
            name: "tv".into(),
            header: "delta,tv".into(),
            rows,
        }],
    })
}
