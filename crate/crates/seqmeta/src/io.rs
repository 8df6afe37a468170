//! CSV/JSON ingestion and emission: studies files, model configs, traces,
//! weights, sweeps, and run manifests.
//!
//! Studies CSV format: header exactly `id,seq_index,group_id,estimate,std_error,label`,
//! UTF-8, LF line endings, decimal points only. `label` may be empty;
//! `group_id` defaults to `id` when empty. All numeric output uses shortest
//! round-trip decimal formatting.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::classical::WeightRow;
use crate::error::{Error, Result};
use crate::trace::SweepRow;
use crate::types::{
    validate_sequence, BeliefSchedule, GaussianBelief, ModelConfig, ModelKind, ResearchTrace,
    ScheduleEntry, StudyRecord, StudySequence, TauSpec,
};

pub const STUDIES_HEADER: &str = "id,seq_index,group_id,estimate,std_error,label";

/// Parses and validates a studies CSV. Errors carry 1-based data-row numbers.
pub fn parse_studies_csv(path: &Path) -> Result<StudySequence> {
    let data = fs::read_to_string(path)?;
    parse_studies_str(&data)
}

pub fn parse_studies_str(data: &str) -> Result<StudySequence> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(data.as_bytes());
    let headers = reader.headers()?.clone();
    let expected: Vec<&str> = STUDIES_HEADER.split(',').collect();
    for name in &expected {
        if !headers.iter().any(|h| h == *name) {
            return Err(Error::MissingColumn {
                name: name.to_string(),
            });
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (ci, cs, cg, ce, cse, cl) = (
        col("id"),
        col("seq_index"),
        col("group_id"),
        col("estimate"),
        col("std_error"),
        col("label"),
    );
    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row?;
        let rownum = row_idx + 1;
        let parse_f64 = |field: &str, raw: &str| -> Result<f64> {
            raw.parse::<f64>().map_err(|_| Error::UnparsableNumber {
                row: rownum,
                field: field.to_string(),
                value: raw.to_string(),
            })
        };
        let parse_u32 = |field: &str, raw: &str| -> Result<u32> {
            raw.parse::<u32>().map_err(|_| Error::UnparsableNumber {
                row: rownum,
                field: field.to_string(),
                value: raw.to_string(),
            })
        };
        let id = row.get(ci).unwrap_or("").to_string();
        let group_raw = row.get(cg).unwrap_or("");
        let label_raw = row.get(cl).unwrap_or("");
        records.push(StudyRecord {
            id: id.clone(),
            seq_index: parse_u32("seq_index", row.get(cs).unwrap_or(""))?,
            group_id: if group_raw.is_empty() {
                id
            } else {
                group_raw.to_string()
            },
            estimate: parse_f64("estimate", row.get(ce).unwrap_or(""))?,
            std_error: parse_f64("std_error", row.get(cse).unwrap_or(""))?,
            label: if label_raw.is_empty() {
                None
            } else {
                Some(label_raw.to_string())
            },
        });
    }
    validate_sequence(records)
}

/// Emits a studies CSV that `parse_studies_csv` round-trips exactly.
pub fn write_studies_csv(seq: &StudySequence, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{STUDIES_HEADER}")?;
    for r in seq.records() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.id,
            r.seq_index,
            r.group_id,
            r.estimate,
            r.std_error,
            r.label.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

fn violation(pointer: &str, message: impl Into<String>) -> Error {
    Error::SchemaViolation {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

fn as_obj<'a>(v: &'a Value, ptr: &str) -> Result<&'a serde_json::Map<String, Value>> {
    v.as_object().ok_or_else(|| violation(ptr, "expected an object"))
}

fn get_f64(obj: &serde_json::Map<String, Value>, key: &str, ptr: &str) -> Result<f64> {
    obj.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| violation(&format!("{ptr}/{key}"), "expected a number"))
}

fn check_keys(obj: &serde_json::Map<String, Value>, allowed: &[&str], ptr: &str) -> Result<()> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(violation(&format!("{ptr}/{key}"), "unknown key"));
        }
    }
    Ok(())
}

/// Parses and validates a model config JSON. Schema errors carry a JSON
/// pointer to the offending member.
pub fn parse_config_json(path: &Path) -> Result<ModelConfig> {
    let data = fs::read_to_string(path)?;
    parse_config_str(&data)
}

pub fn parse_config_str(data: &str) -> Result<ModelConfig> {
    let root: Value = serde_json::from_str(data)?;
    let obj = as_obj(&root, "")?;
    check_keys(
        obj,
        &["schema", "model", "prior", "tau", "kappa_schedule", "metric", "grid"],
        "",
    )?;
    match obj.get("schema").and_then(Value::as_u64) {
        Some(1) => {}
        _ => return Err(violation("/schema", "expected the integer 1")),
    }

    let model = match obj.get("model").and_then(Value::as_str) {
        Some("fixed_effect") => ModelKind::FixedEffect,
        Some("random_effects") => ModelKind::RandomEffects,
        Some("labeled_random_effects") => ModelKind::LabeledRandomEffects,
        _ => {
            return Err(violation(
                "/model",
                "expected one of fixed_effect, random_effects, labeled_random_effects",
            ))
        }
    };

    let prior_obj = as_obj(
        obj.get("prior").ok_or_else(|| violation("/prior", "missing"))?,
        "/prior",
    )?;
    check_keys(prior_obj, &["mean", "sd"], "/prior")?;
    let prior = GaussianBelief::new(
        get_f64(prior_obj, "mean", "/prior")?,
        get_f64(prior_obj, "sd", "/prior")?,
    )
    .map_err(|_| violation("/prior/sd", "sd must be positive and finite"))?;

    let tau_obj = as_obj(
        obj.get("tau").ok_or_else(|| violation("/tau", "missing"))?,
        "/tau",
    )?;
    let tau_spec = match tau_obj.get("mode").and_then(Value::as_str) {
        Some("fixed") => {
            check_keys(tau_obj, &["mode", "value"], "/tau")?;
            let value = get_f64(tau_obj, "value", "/tau")?;
            if value < 0.0 || !value.is_finite() {
                return Err(violation("/tau/value", "tau must be >= 0"));
            }
            TauSpec::Fixed(value)
        }
        Some("plugin_dl") => {
            check_keys(tau_obj, &["mode"], "/tau")?;
            TauSpec::PlugInDl
        }
        Some("halfnormal") => {
            check_keys(tau_obj, &["mode", "scale"], "/tau")?;
            let scale = get_f64(tau_obj, "scale", "/tau")?;
            if !(scale > 0.0) {
                return Err(violation("/tau/scale", "scale must be > 0"));
            }
            TauSpec::HalfNormal { scale }
        }
        _ => {
            return Err(violation(
                "/tau/mode",
                "expected one of fixed, plugin_dl, halfnormal",
            ))
        }
    };

    let mut entries = Vec::new();
    if let Some(ks) = obj.get("kappa_schedule") {
        let arr = ks
            .as_array()
            .ok_or_else(|| violation("/kappa_schedule", "expected an array"))?;
        for (i, item) in arr.iter().enumerate() {
            let ptr = format!("/kappa_schedule/{i}");
            let e = as_obj(item, &ptr)?;
            check_keys(e, &["from", "label", "kappa"], &ptr)?;
            let from = e
                .get("from")
                .and_then(Value::as_u64)
                .filter(|f| *f >= 1)
                .ok_or_else(|| violation(&format!("{ptr}/from"), "expected an integer >= 1"))?;
            let label = e
                .get("label")
                .and_then(Value::as_str)
                .ok_or_else(|| violation(&format!("{ptr}/label"), "expected a string"))?;
            let kappa = get_f64(e, "kappa", &ptr)?;
            if !(kappa > 0.0) {
                return Err(violation(
                    &format!("{ptr}/kappa"),
                    "kappa must be > 0 (use 1e-4 to encode 'believed unbiased')",
                ));
            }
            entries.push(ScheduleEntry {
                effective_from: from as u32,
                label: label.to_string(),
                kappa,
            });
        }
    }
    let schedule = BeliefSchedule::new(entries, tau_spec)?;

    let metric_p = match obj.get("metric") {
        None => 2,
        Some(m) => {
            let m = as_obj(m, "/metric")?;
            check_keys(m, &["p"], "/metric")?;
            match m.get("p").and_then(Value::as_u64) {
                Some(1) => 1,
                Some(2) => 2,
                _ => return Err(violation("/metric/p", "expected 1 or 2")),
            }
        }
    };

    let (grid_n, quantile_n) = match obj.get("grid") {
        None => (512, 1024),
        Some(g) => {
            let g = as_obj(g, "/grid")?;
            check_keys(g, &["n", "quantile_n"], "/grid")?;
            let n = g
                .get("n")
                .and_then(Value::as_u64)
                .ok_or_else(|| violation("/grid/n", "expected an integer"))? as usize;
            let qn = g
                .get("quantile_n")
                .and_then(Value::as_u64)
                .ok_or_else(|| violation("/grid/quantile_n", "expected an integer"))?
                as usize;
            (n, qn)
        }
    };

    ModelConfig::new(model, prior, schedule, metric_p, grid_n, quantile_n)
}

/// Reproducibility provenance written next to every command output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Lowercase-hex SHA-256 of the config bytes.
    pub config_digest: String,
    /// Lowercase-hex SHA-256 of the input bytes.
    pub input_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_identity: Option<String>,
    /// UTC ISO-8601.
    pub timestamp: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

impl RunManifest {
    pub fn new(config_bytes: &[u8], input_bytes: &[u8], rng_identity: Option<String>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: sha256_hex(config_bytes),
            input_digest: sha256_hex(input_bytes),
            rng_identity,
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Columns beyond the always-present Wasserstein-p contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceColumns {
    pub w1: bool,
    pub lindley: bool,
}

pub fn write_trace_csv(
    trace: &ResearchTrace,
    columns: TraceColumns,
    out: &mut dyn Write,
) -> Result<()> {
    let mut header = String::from("step,study_ids,post_mean,post_sd,ci95_lo,ci95_hi,w_contribution");
    if columns.w1 {
        header.push_str(",w1");
    }
    if columns.lindley {
        header.push_str(",lindley");
    }
    writeln!(out, "{header}")?;
    for row in &trace.rows {
        let mut line = format!(
            "{},{},{},{},{},{},{}",
            row.step,
            row.study_ids.join(";"),
            row.post_mean,
            row.post_sd,
            row.ci95_lo,
            row.ci95_hi,
            row.w_contribution
        );
        if columns.w1 {
            line.push_str(&format!(",{}", row.w1_contribution));
        }
        if columns.lindley {
            line.push_str(&format!(",{}", row.lindley_contribution));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_weights_csv(rows: &[WeightRow], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "step,study_id,weight_percent")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.step, r.study_id, r.weight_percent)?;
    }
    Ok(())
}

pub fn write_sweep_csv(rows: &[SweepRow], out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "kappa_value,w_contribution_at_focus_step,post_mean_final,post_sd_final"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.kappa_value, r.w_contribution, r.post_mean_final, r.post_sd_final
        )?;
    }
    Ok(())
}

/// JSON emission of a belief schedule, loadable back into a config's
/// `kappa_schedule` member.
pub fn schedule_json(schedule: &BeliefSchedule) -> Value {
    let entries: Vec<Value> = schedule
        .entries
        .iter()
        .map(|e| {
            serde_json::json!({
                "from": e.effective_from,
                "label": e.label,
                "kappa": e.kappa,
            })
        })
        .collect();
    let tau = match schedule.tau_spec {
        TauSpec::Fixed(v) => serde_json::json!({"mode": "fixed", "value": v}),
        TauSpec::PlugInDl => serde_json::json!({"mode": "plugin_dl"}),
        TauSpec::HalfNormal { scale } => serde_json::json!({"mode": "halfnormal", "scale": scale}),
    };
    serde_json::json!({
        "schema": 1,
        "kappa_schedule": entries,
        "tau": tau,
    })
}
