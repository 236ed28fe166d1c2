//! End-to-end tests of the scenario runner: builtin registry, report and
//! manifest layout, determinism, seed plumbing, and the binary's exit-code
//! contract (0 ok, 2 config, 3 experiment, 4 i/o).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use levylab::rng::scenario_seed;
use levylab_cli::config::ConfigFile;
use levylab_cli::runner::{run, OutputFormat, RunOptions, RunSource, RunSummary};
use levylab_cli::scenarios::BUILTINS;
use levylab_cli::CliError;
use tempfile::tempdir;

fn options(out_dir: &Path, format: OutputFormat) -> RunOptions {
    RunOptions {
        out_dir: out_dir.to_path_buf(),
        seed_override: None,
        format,
        jobs: Some(2),
    }
}

fn run_builtin(id: &str, out_dir: &Path, format: OutputFormat) -> RunSummary {
    run(&RunSource::Builtin(id.into()), &options(out_dir, format))
        .unwrap_or_else(|e| panic!("builtin '{id}' failed: {e}"))
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {path:?}: {e}"));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parsing {path:?}: {e}"))
}

#[test]
fn builtin_registry_parses_completely() {
    assert!(BUILTINS.len() >= 6, "expected at least six builtins");
    let mut ids: Vec<&str> = BUILTINS.iter().map(|b| b.id).collect();
    assert!(ids.contains(&"example-2.3"));
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), BUILTINS.len(), "builtin ids must be unique");
    for builtin in BUILTINS {
        let config = ConfigFile::parse(builtin.toml)
            .unwrap_or_else(|e| panic!("builtin '{}' does not parse: {e}", builtin.id));
        assert_eq!(config.scenarios.len(), 1);
        assert_eq!(config.scenarios[0].id, builtin.id);
        assert!(!builtin.summary.is_empty());
    }
}

#[test]
fn run_builtin_writes_reports_tables_and_manifest() {
    let dir = tempdir().unwrap();
    let summary = run_builtin("stable-alpha", dir.path(), OutputFormat::Csv);
    assert_eq!((summary.passed, summary.failed), (1, 0));

    let manifest = read_json(&summary.manifest_path);
    assert_eq!(manifest["schema_version"], 1);
    assert!(manifest["generated_at_unix_s"].is_u64());
    let entry = &manifest["scenarios"][0];
    assert_eq!(entry["id"], "stable-alpha");
    assert_eq!(entry["status"], "ok");
    assert_eq!(entry["report"], "stable-alpha.json");

    let report = read_json(&dir.path().join("stable-alpha.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["experiment"], "indices");
    assert_eq!(report["effective_seed"], entry["effective_seed"]);
    // The scenario is echoed so a report is self-describing.
    assert_eq!(report["scenario"]["measure"]["kind"], "alpha-stable");
    let upper = report["results"]["upper_indices"].as_array().unwrap();
    assert!(!upper.is_empty());
    assert!(upper
        .iter()
        .all(|c| c["classification"]["class"] == "infinite"));
    assert_eq!(report["results"]["theta"]["class"], "infinite");

    for table in entry["tables"].as_array().unwrap() {
        let path = dir.path().join(table.as_str().unwrap());
        let text = fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.contains(','), "CSV header expected in {path:?}");
        assert!(text.lines().count() > 1, "no data rows in {path:?}");
    }
}

#[test]
fn reruns_are_identical_up_to_the_timestamp() {
    let keep = |text: &str| -> String {
        text.lines()
            .filter(|l| !l.contains("generated_at_unix_s"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    run_builtin("stable-alpha", a.path(), OutputFormat::Csv);
    run_builtin("stable-alpha", b.path(), OutputFormat::Csv);

    let mut names: Vec<String> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() >= 2, "expected a report and a manifest");
    for name in names {
        let one = fs::read_to_string(a.path().join(&name)).unwrap();
        let two = fs::read_to_string(b.path().join(&name)).unwrap();
        assert_eq!(keep(&one), keep(&two), "{name} differs between reruns");
    }
}

#[test]
fn seed_override_rewires_every_scenario_seed() {
    let dir = tempdir().unwrap();
    let opts = RunOptions {
        seed_override: Some(7),
        ..options(dir.path(), OutputFormat::Json)
    };
    let summary = run(&RunSource::Builtin("stable-alpha".into()), &opts).unwrap();
    let manifest = read_json(&summary.manifest_path);
    assert_eq!(
        manifest["scenarios"][0]["effective_seed"],
        serde_json::json!(scenario_seed(7, "stable-alpha"))
    );
}

/// Two scenarios, one of which fails its expectation: the runner reports the
/// failure through its error value but still writes both the manifest entry
/// and the passing scenario's report.
#[test]
fn failures_are_reported_but_do_not_block_other_reports() {
    let config = r#"
        schema_version = 1

        [[scenario]]
        id = "good"
        experiment = "indices"
        seed = 1
        [scenario.measure]
        kind = "geometric-atoms"
        gamma = 2.718281828459045
        n_max = 60
        [scenario.budgets]
        r_list = [1]
        expect_class = "finite"

        [[scenario]]
        id = "bad"
        experiment = "indices"
        seed = 1
        [scenario.measure]
        kind = "geometric-atoms"
        gamma = 2.718281828459045
        n_max = 60
        [scenario.budgets]
        r_list = [1]
        expect_class = "infinite"
    "#;
    let dir = tempdir().unwrap();
    let path = dir.path().join("pair.toml");
    fs::write(&path, config).unwrap();
    let err = run(
        &RunSource::ConfigPath(path),
        &options(dir.path(), OutputFormat::Json),
    )
    .expect_err("the failing scenario must surface as an error");
    assert!(matches!(err, CliError::Experiment(_)), "got {err:?}");
    assert_eq!(err.exit_code(), 3);

    let manifest = read_json(&dir.path().join("manifest.json"));
    let entries = manifest["scenarios"].as_array().unwrap();
    assert_eq!(entries[0]["status"], "ok");
    assert_eq!(entries[1]["status"], "failed");
    assert!(entries[1]["error"]
        .as_str()
        .unwrap()
        .contains("expected `infinite`"));
    assert!(dir.path().join("good.json").exists());
    assert!(!dir.path().join("bad.json").exists());
}

// ---------------------------------------------------------------------------
// binary-level contract
// ---------------------------------------------------------------------------

fn levylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levylab"))
        .args(args)
        .output()
        .expect("spawning the levylab binary")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn binary_config_errors_exit_2() {
    let out = levylab(&["run", "--builtin", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("unknown builtin scenario"));

    // clap usage errors share the config exit code.
    let out = levylab(&["run"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "schema_version = 1\nbogus_key = 3\n").unwrap();
    let out = levylab(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("bogus_key"));
}

#[test]
fn binary_missing_config_exits_4() {
    let out = levylab(&["run", "--config", "/nonexistent/levylab.toml"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_of(&out).contains("i/o error"));
}

#[test]
fn binary_failed_expectation_exits_3() {
    let config = r#"
        schema_version = 1

        [[scenario]]
        id = "mislabeled"
        experiment = "indices"
        seed = 1
        [scenario.measure]
        kind = "geometric-atoms"
        gamma = 2.718281828459045
        n_max = 60
        [scenario.budgets]
        r_list = [1]
        expect_class = "zero"
    "#;
    let dir = tempdir().unwrap();
    let path = dir.path().join("fail.toml");
    fs::write(&path, config).unwrap();
    let out = levylab(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).contains("experiment failure"));
}

#[test]
fn binary_list_names_every_builtin() {
    let out = levylab(&["list"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    for builtin in BUILTINS {
        assert!(stdout.contains(builtin.id), "list omits {}", builtin.id);
    }
}

#[test]
fn binary_describe_prints_the_embedded_config() {
    let out = levylab(&["describe", "example-2.3"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let embedded = BUILTINS.iter().find(|b| b.id == "example-2.3").unwrap().toml;
    assert_eq!(stdout.trim_end(), embedded.trim_end());

    let out = levylab(&["describe", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

// ---------------------------------------------------------------------------
// config-table defaults and validation
// ---------------------------------------------------------------------------

#[test]
fn scenario_defaults_and_validation() {
    let minimal = r#"
        schema_version = 1

        [[scenario]]
        id = "m"
        experiment = "indices"
        [scenario.measure]
        kind = "single-atom"
        location = [1.0]
        weight = 1.0
    "#;
    let config = ConfigFile::parse(minimal).unwrap();
    let scenario = &config.scenarios[0];
    assert_eq!(scenario.seed, 0);
    assert_eq!(scenario.horizons().unwrap(), vec![1.0]);

    for (snippet, needle) in [
        ("schema_version = 2", "schema_version"),
        (
            r#"
            schema_version = 1
            [[scenario]]
            id = "x"
            experiment = "indices"
            [scenario.measure]
            kind = "single-atom"
            location = [1.0]
            weight = 1.0
            [scenario.budgets]
            eps_cut = 1.5
            "#,
            "eps_cut",
        ),
        (
            r#"
            schema_version = 1
            [[scenario]]
            id = "x"
            experiment = "indices"
            [scenario.measure]
            kind = "single-atom"
            location = [1.0]
            weight = 1.0
            [[scenario]]
            id = "x"
            experiment = "indices"
            [scenario.measure]
            kind = "single-atom"
            location = [1.0]
            weight = 1.0
            "#,
            "duplicate scenario id",
        ),
    ] {
        let err = ConfigFile::parse(snippet).expect_err(needle);
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains(needle), "missing '{needle}' in {err}");
    }
}
