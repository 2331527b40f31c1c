//! Score tables, ROC point tables and metrics documents.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{FoldMetrics, FoldSummary, RocCurve};
use crate::manifest::Label;
use crate::projection::ProjectionType;

/// One row of a scores table: `case_id,score,label` followed by one raw
/// score column per projection type.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub case_id: String,
    pub score: f64,
    pub label: Label,
    pub raw: BTreeMap<ProjectionType, f64>,
}

pub fn write_scores(rows: &[ScoreRow]) -> Result<Vec<u8>> {
    let types: Vec<ProjectionType> = rows
        .first()
        .map(|r| r.raw.keys().copied().collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["case_id".to_string(), "score".into(), "label".into()];
    header.extend(types.iter().map(|p| p.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.case_id.clone(), r.score.to_string(), r.label.as_str().to_string()];
        for p in &types {
            let v = r
                .raw
                .get(p)
                .ok_or_else(|| Error::InvalidArgument(format!("row {} lacks {p}", r.case_id)))?;
            rec.push(v.to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Manifest(e.to_string())
}

#[derive(Debug, Deserialize)]
struct ScoreRecord {
    case_id: String,
    score: f64,
    label: Label,
}

/// Reads `case_id,score,label` (extra columns are ignored).
pub fn read_scores(text: &str) -> Result<Vec<(String, f64, Label)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<ScoreRecord>()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            if !rec.score.is_finite() {
                return Err(Error::InvalidArgument(format!("score of {} is not finite", rec.case_id)));
            }
            Ok((rec.case_id, rec.score, rec.label))
        })
        .collect()
}

pub fn load_scores(path: &Path) -> Result<Vec<(String, f64, Label)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_scores(&text)
}

/// `threshold,fpr,tpr` rows; the first threshold is `inf`.
pub fn write_roc(roc: &RocCurve) -> Vec<u8> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &roc.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out.into_bytes()
}

/// Metrics document written by evaluation runs. Top-level metrics are
/// those of the single score set, or fold means for Monte Carlo runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    /// Operating threshold; absent for Monte Carlo summaries.
    pub threshold: Option<f64>,
    pub folds: Vec<FoldMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<FoldSummary>,
}

impl MetricsReport {
    pub fn single(fold: FoldMetrics) -> Self {
        MetricsReport {
            auc: fold.auc,
            accuracy: fold.metrics.accuracy,
            sensitivity: fold.metrics.sensitivity,
            specificity: fold.metrics.specificity,
            precision: fold.metrics.precision,
            f1: fold.metrics.f1,
            threshold: Some(fold.threshold),
            folds: vec![fold],
            summary: None,
        }
    }

    pub fn monte_carlo(folds: Vec<FoldMetrics>, summary: FoldSummary) -> Self {
        let mean = |m: &Option<crate::evaluation::MeanStd>| m.map(|m| m.mean);
        MetricsReport {
            auc: summary.auc.map(|m| m.mean).unwrap_or(f64::NAN),
            accuracy: mean(&summary.accuracy),
            sensitivity: mean(&summary.sensitivity),
            specificity: mean(&summary.specificity),
            precision: mean(&summary.precision),
            f1: mean(&summary.f1),
            threshold: None,
            folds,
            summary: Some(summary),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }
}
