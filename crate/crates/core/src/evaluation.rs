//! Patient-level scores, ROC analysis and confusion metrics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::percentile::nearest_rank;
use crate::projection::ProjectionType;

/// Percentile of held-out normal scores used as the calibration upper bound.
pub const CALIBRATION_PCT: f64 = 99.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Counts with "positive" meaning `score >= threshold`.
    pub fn at_threshold(scores: &[(f64, bool)], threshold: f64) -> Self {
        let mut c = ConfusionCounts::default();
        for &(s, abnormal) in scores {
            match (s >= threshold, abnormal) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Each metric is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion_metrics(c: &ConfusionCounts) -> Metrics {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        precision,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// `+∞` for the (0, 0) endpoint.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC over every distinct score used as a threshold (positive means
/// `score >= threshold`), starting at (0, 0). Equal scores form one step and
/// the area is accumulated in integer counts before a single division.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<RocCurve> {
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!(
            "{pos} abnormal and {neg} normal cases"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let thr = sorted[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < sorted.len() && sorted[i].0 == thr {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
        points.push(RocPoint {
            threshold: thr,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = twice_area as f64 / (2 * pos * neg) as f64;
    Ok(RocCurve { points, auc })
}

/// Threshold of the curve point closest to (FPR 0, TPR 1); ties go to the
/// higher threshold. The (0, 0) endpoint is not a candidate.
pub fn operating_point(roc: &RocCurve) -> f64 {
    let mut best = (f64::INFINITY, f64::NEG_INFINITY);
    for p in roc.points.iter().filter(|p| p.threshold.is_finite()) {
        let d = (p.fpr * p.fpr + (1.0 - p.tpr) * (1.0 - p.tpr)).sqrt();
        if d < best.0 || (d == best.0 && p.threshold > best.1) {
            best = (d, p.threshold);
        }
    }
    best.1
}

/// Per-projection score bounds from held-out normal cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub bounds: BTreeMap<ProjectionType, (f64, f64)>,
}

/// `lo` = minimum and `hi` = nearest-rank 99th percentile of each
/// projection's normal scores.
pub fn calibrate(scores: &BTreeMap<ProjectionType, Vec<f64>>) -> Result<Calibration> {
    if scores.is_empty() {
        return Err(Error::InsufficientCases("no calibration scores".into()));
    }
    let mut bounds = BTreeMap::new();
    for (&p, s) in scores {
        if s.len() < 2 {
            return Err(Error::InsufficientCases(format!(
                "{p}: {} calibration cases, need at least 2",
                s.len()
            )));
        }
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nearest_rank(s.clone(), CALIBRATION_PCT);
        bounds.insert(p, (lo, hi));
    }
    Ok(Calibration { bounds })
}

impl Calibration {
    pub fn normalize(&self, p: ProjectionType, s: f64) -> Result<f64> {
        let &(lo, hi) = self
            .bounds
            .get(&p)
            .ok_or_else(|| Error::ProjectionMismatch(format!("no calibration for {p}")))?;
        Ok(if hi > lo {
            ((s - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        })
    }
}

/// Mean of the calibrated scores of the projections in `set`.
pub fn patient_score(
    scores: &BTreeMap<ProjectionType, f64>,
    cal: &Calibration,
    set: &[ProjectionType],
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty projection set".into()));
    }
    let mut sum = 0.0;
    for p in set {
        let s = scores
            .get(p)
            .ok_or_else(|| Error::InvalidArgument(format!("missing score for {p}")))?;
        sum += cal.normalize(*p, *s)?;
    }
    Ok(sum / set.len() as f64)
}

/// Case indices of one Monte Carlo fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test_normal: Vec<usize>,
    pub test_abnormal: Vec<usize>,
}

/// Split sizes; `None` takes whatever is available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: Option<usize>,
    pub calibration: usize,
    pub test_per_class: Option<usize>,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: None,
            calibration: 20,
            test_per_class: None,
        }
    }
}

/// Seeded random splits with balanced test sets. Normal cases are shuffled
/// and dealt to test, calibration and training in that order; abnormal cases
/// are shuffled and the first `n_test` are used.
pub fn monte_carlo_splits(
    normals: &[usize],
    abnormals: &[usize],
    folds: usize,
    seed: u64,
    sizes: SplitSizes,
) -> Result<Vec<FoldSplit>> {
    if folds == 0 {
        return Err(Error::Config("folds must be >= 1".into()));
    }
    if sizes.calibration < 2 {
        return Err(Error::Config("calibration needs at least 2 normal cases".into()));
    }
    let available_normals = normals.len().saturating_sub(sizes.calibration + 1);
    let n_test = sizes
        .test_per_class
        .unwrap_or(abnormals.len().min(available_normals / 2));
    let n_train_min = sizes.train.unwrap_or(1);
    if n_test == 0 || n_test > abnormals.len() || n_test + sizes.calibration + n_train_min > normals.len() {
        return Err(Error::InsufficientCases(format!(
            "{} normal / {} abnormal cases cannot fill {n_test} test per class, {} calibration, {n_train_min} training",
            normals.len(),
            abnormals.len(),
            sizes.calibration
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..folds)
        .map(|_| {
            let mut n = normals.to_vec();
            let mut a = abnormals.to_vec();
            n.shuffle(&mut rng);
            a.shuffle(&mut rng);
            let test_normal = n[..n_test].to_vec();
            let calibration = n[n_test..n_test + sizes.calibration].to_vec();
            let rest = &n[n_test + sizes.calibration..];
            let train = rest[..sizes.train.unwrap_or(rest.len())].to_vec();
            Ok(FoldSplit {
                train,
                calibration,
                test_normal,
                test_abnormal: a[..n_test].to_vec(),
            })
        })
        .collect()
}

/// Metrics of one scored test set at its operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub auc: f64,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

pub fn evaluate_scores(scores: &[(f64, bool)]) -> Result<(RocCurve, FoldMetrics)> {
    let roc = roc_auc(scores)?;
    let threshold = operating_point(&roc);
    let counts = ConfusionCounts::at_threshold(scores, threshold);
    let metrics = confusion_metrics(&counts);
    let fm = FoldMetrics {
        auc: roc.auc,
        threshold,
        counts,
        metrics,
    };
    Ok((roc, fm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

/// Mean and sample standard deviation of the defined values.
pub fn mean_std(values: impl IntoIterator<Item = Option<f64>>) -> Option<MeanStd> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub auc: Option<MeanStd>,
    pub accuracy: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
    pub precision: Option<MeanStd>,
    pub f1: Option<MeanStd>,
}

pub fn summarize(folds: &[FoldMetrics]) -> FoldSummary {
    let pick = |f: fn(&FoldMetrics) -> Option<f64>| mean_std(folds.iter().map(f));
    FoldSummary {
        auc: pick(|m| Some(m.auc)),
        accuracy: pick(|m| m.metrics.accuracy),
        sensitivity: pick(|m| m.metrics.sensitivity),
        specificity: pick(|m| m.metrics.specificity),
        precision: pick(|m| m.metrics.precision),
        f1: pick(|m| m.metrics.f1),
    }
}
