//! CSV rows and the Markdown summary table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ALIGNMENT_METRIC, CONSISTENCY_METRIC, MOTION_METRIC};
use crate::error::{Result, VmcError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub clip_id: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_metric_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| VmcError::Config(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| VmcError::Config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One line of the summary table: method name and metric means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub alignment: f64,
    pub consistency: f64,
    pub motion: f64,
}

fn cell(v: f64) -> String {
    if v.is_nan() { "n/a".into() } else { format!("{v:.3}") }
}

/// Columns follow the usual quantitative layout: text alignment, temporal
/// consistency, motion preservation, each labelled with its stand-in name.
pub fn markdown_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "| Method | Text alignment ({ALIGNMENT_METRIC}) | Temporal consistency ({CONSISTENCY_METRIC}) | Motion preservation ({MOTION_METRIC}) |\n|---|---|---|---|\n"
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            r.method,
            cell(r.alignment),
            cell(r.consistency),
            cell(r.motion)
        ));
    }
    out
}
