use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::LossBreakdown;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const METRICS_SCHEMA: u32 = 1;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub schema: u32,
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    /// Mean per-dimension standard deviation of the query-side embeddings.
    pub embedding_std: f64,
    pub queue_filled: usize,
    pub collapse_warning: bool,
    pub wall_time: Option<f64>,
}

/// Parses a metrics stream; malformed lines are reported by number.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricsRecord>(&line) {
            Ok(r) => out.push(r),
            Err(e) => bad.push(format!("line {}: {e}", i + 1)),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Format(format!("{}: {}", path.display(), bad.join("; "))));
    }
    Ok(out)
}

/// Keeps only records with a step before `step`.
pub(super) fn truncate_before(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in text.lines() {
        let rec: MetricsRecord =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if rec.step < step {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}
