//! Run orchestration: load a scenario file (or builtin), execute every
//! scenario on a rayon pool, and write one JSON report per scenario plus a
//! run manifest.
//!
//! Failed scenarios do not abort the run: every other report is still
//! written and the manifest records per-scenario status; the run itself
//! then exits with the most severe per-scenario error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::json;

use levylab::rng::scenario_seed;

use crate::config::ConfigFile;
use crate::experiments::run_experiment;
use crate::report::{ExperimentOutput, Report};
use crate::scenarios;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    /// JSON reports only.
    Json,
    /// JSON reports plus one CSV file per plot table.
    Csv,
}

#[derive(Debug)]
pub enum RunSource {
    ConfigPath(PathBuf),
    Builtin(String),
}

#[derive(Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replaces every scenario's base seed when set.
    pub seed_override: Option<u64>,
    pub format: OutputFormat,
    /// Worker threads for the scenario pool; `None` uses the rayon default.
    pub jobs: Option<usize>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub manifest_path: PathBuf,
    pub passed: usize,
    pub failed: usize,
}

pub fn run(source: &RunSource, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let config = match source {
        RunSource::ConfigPath(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
            ConfigFile::parse(&text)?
        }
        RunSource::Builtin(id) => scenarios::parse(id)?,
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = opts.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("building the thread pool: {e}")))?;

    let generated_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    // Scenario-level parallelism; experiments may fan out further on the
    // same pool.  Collection preserves scenario order.
    let outcomes: Vec<(u64, Result<ExperimentOutput, CliError>)> = pool.install(|| {
        config
            .scenarios
            .par_iter()
            .map(|scenario| {
                let base = opts.seed_override.unwrap_or(scenario.seed);
                let effective = scenario_seed(base, &scenario.id);
                (effective, run_experiment(scenario, effective))
            })
            .collect()
    });

    fs::create_dir_all(&opts.out_dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", opts.out_dir.display())))?;

    let mut entries = Vec::new();
    let mut failures: Vec<&CliError> = Vec::new();
    for (scenario, (effective_seed, outcome)) in config.scenarios.iter().zip(&outcomes) {
        let id = &scenario.id;
        match outcome {
            Ok(output) => {
                let report = Report {
                    schema_version: config.schema_version,
                    generated_at_unix_s: generated_at,
                    experiment: scenario.experiment.to_string(),
                    effective_seed: *effective_seed,
                    scenario: scenario.clone(),
                    results: output.results.clone(),
                };
                let report_name = format!("{id}.json");
                write_text(
                    &opts.out_dir.join(&report_name),
                    &render_json(&report)?,
                )?;
                let mut tables = Vec::new();
                if opts.format == OutputFormat::Csv {
                    for table in &output.tables {
                        let table_name = format!("{id}.{}.csv", table.name);
                        write_text(&opts.out_dir.join(&table_name), &table.render())?;
                        tables.push(table_name);
                    }
                }
                entries.push(json!({
                    "id": id,
                    "experiment": scenario.experiment.to_string(),
                    "effective_seed": effective_seed,
                    "status": "ok",
                    "report": report_name,
                    "tables": tables,
                }));
            }
            Err(err) => {
                failures.push(err);
                entries.push(json!({
                    "id": id,
                    "experiment": scenario.experiment.to_string(),
                    "effective_seed": effective_seed,
                    "status": "failed",
                    "error": err.to_string(),
                }));
            }
        }
    }

    let manifest = json!({
        "schema_version": config.schema_version,
        "generated_at_unix_s": generated_at,
        "scenarios": entries,
    });
    let manifest_path = opts.out_dir.join("manifest.json");
    write_text(&manifest_path, &render_json(&manifest)?)?;

    if !failures.is_empty() {
        let joined = failures
            .iter()
            .map(|e| match e {
                CliError::Config(m) | CliError::Experiment(m) | CliError::Io(m) => m.as_str(),
            })
            .collect::<Vec<_>>()
            .join("; ");
        // Config mistakes outrank runtime failures in the exit code.
        if failures.iter().any(|e| matches!(e, CliError::Config(_))) {
            return Err(CliError::Config(joined));
        }
        return Err(CliError::Experiment(joined));
    }
    Ok(RunSummary {
        manifest_path,
        passed: outcomes.len(),
        failed: 0,
    })
}

fn render_json(value: &impl serde::Serialize) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serializing a report: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}
