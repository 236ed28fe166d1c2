//! Report assembly: one JSON document per scenario plus optional CSV plot
//! tables (`--format csv`), and the run manifest.

use serde::Serialize;
use serde_json::{json, Value};

use levylab::diagnostics::{CharProbeRow, Regime, SupDensityRow};
use levylab::levy_measure::IndexClass;

use crate::config::Scenario;

/// Full per-scenario report.  `generated_at_unix_s` is the only field that
/// may differ between reruns with identical seeds.
#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub generated_at_unix_s: u64,
    pub experiment: String,
    pub effective_seed: u64,
    /// The fully resolved scenario config (self-describing outputs).
    pub scenario: Scenario,
    pub results: Value,
}

/// One CSV plot table: stable header, one formatted line per row.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl CsvTable {
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.header.len() + self.rows.len() * 32);
        out.push_str(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }
}

/// Experiment output: a JSON value for the report plus CSV tables.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub results: Value,
    pub tables: Vec<CsvTable>,
}

pub fn index_class_json(class: &IndexClass) -> Value {
    match class {
        IndexClass::Zero => json!({ "class": "zero" }),
        IndexClass::Infinite => json!({ "class": "infinite" }),
        IndexClass::Finite { value, uncertainty } => json!({
            "class": "finite",
            "value": value,
            "uncertainty": uncertainty,
        }),
    }
}

pub fn regime_json(regime: &Regime) -> Value {
    let mut value = json!({
        "tag": regime.tag(),
        "text": regime.to_string(),
    });
    if let Regime::Gradual {
        no_smooth_below,
        smooth_above,
    } = regime
    {
        value["band"] = json!([no_smooth_below, smooth_above]);
    }
    if let Regime::Inconclusive { reason } = regime {
        value["reason"] = json!(reason);
    }
    value
}

pub fn sup_density_json(rows: &[SupDensityRow]) -> Value {
    Value::Array(
        rows.iter()
            .map(|row| {
                json!({
                    "t": row.t,
                    "bandwidths": row.probe.bandwidths.to_vec(),
                    "max_values": row.probe.max_values.to_vec(),
                    "verdict": row.probe.verdict.label(),
                })
            })
            .collect(),
    )
}

pub fn char_probe_json(rows: &[CharProbeRow]) -> Value {
    Value::Array(
        rows.iter()
            .map(|row| {
                json!({
                    "z": row.z,
                    "re": row.re,
                    "im": row.im,
                    "modulus": row.modulus,
                    "std_error": row.std_error,
                })
            })
            .collect(),
    )
}
