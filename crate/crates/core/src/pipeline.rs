//! End-to-end orchestration: run configuration, case preparation, bank
//! training, scoring, localization and Monte Carlo evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    calibrate, evaluate_scores, monte_carlo_splits, patient_score, summarize, Calibration, FoldMetrics,
    FoldSplit, FoldSummary, SplitSizes,
};
use crate::features::{ExtractorConfig, FeatureExtractor, FeatureGrid, FilterBankExtractor};
use crate::manifest::{CaseRecord, Label, Manifest};
use crate::memory_bank::{
    aggregate_bank, anomaly_map, build_bank, AnomalyMap2D, IndexedBank, MemoryBank, DEFAULT_CORESET_FRAC,
    DEFAULT_SMOOTHING_SIGMA,
};
use crate::mvol::load_volume;
use crate::projection::{
    project_case, ProjectedImage, ProjectedMask, ProjectionMethod, ProjectionSet, ProjectionType, Side,
    DEFAULT_CANVAS,
};
use crate::reconstruction::{
    binarize_top, fuse_final, fuse_per_lung, localization_hit, mask_normalize_2d, reverse_project, AnomalyVolume,
    NormConfig, ProjectionSidecar, DEFAULT_LOCALIZATION_PCT, DEFAULT_Q,
};
use crate::segmentation::{split_left_right, threshold_segment_phantom, LungPair};
use crate::volume::{Volume, HU_HI, HU_LO};

/// Where lung masks come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LungSource {
    /// Mask files listed in the manifest.
    #[default]
    Manifest,
    /// Threshold segmentation of the CT (phantoms only).
    Threshold,
    /// No segmentation: the volume is cut into left and right halves.
    Unsegmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hu_lo: i16,
    pub hu_hi: i16,
    pub method: ProjectionMethod,
    pub projection_set: ProjectionSet,
    pub canvas: (usize, usize),
    pub extractor: ExtractorConfig,
    pub coreset_frac: f64,
    pub q: f64,
    pub smoothing_sigma: f64,
    pub localization_pct: f64,
    pub lungs: LungSource,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hu_lo: HU_LO,
            hu_hi: HU_HI,
            method: ProjectionMethod::Mip,
            projection_set: ProjectionSet::AllThree,
            canvas: DEFAULT_CANVAS,
            extractor: ExtractorConfig::default(),
            coreset_frac: DEFAULT_CORESET_FRAC,
            q: DEFAULT_Q,
            smoothing_sigma: DEFAULT_SMOOTHING_SIGMA,
            localization_pct: DEFAULT_LOCALIZATION_PCT,
            lungs: LungSource::Manifest,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hu_lo >= self.hu_hi {
            return bad(format!("hu_lo {} must be below hu_hi {}", self.hu_lo, self.hu_hi));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return bad("canvas must be non-empty".into());
        }
        self.extractor.validate()?;
        for &s in &self.extractor.scales {
            if self.canvas.0 / s < self.extractor.patch_size || self.canvas.1 / s < self.extractor.patch_size {
                return bad(format!("canvas {:?} too small for scale {s}", self.canvas));
            }
        }
        if !(self.coreset_frac > 0.0 && self.coreset_frac <= 1.0) {
            return bad(format!("coreset_frac {} not in (0,1]", self.coreset_frac));
        }
        NormConfig::new(self.q)?;
        if !(self.smoothing_sigma >= 0.0 && self.smoothing_sigma.is_finite()) {
            return bad(format!("smoothing_sigma {} must be >= 0", self.smoothing_sigma));
        }
        if !(0.0..=100.0).contains(&self.localization_pct) {
            return bad(format!("localization_pct {} not in [0,100]", self.localization_pct));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text)
    }

    pub fn norm(&self) -> NormConfig {
        NormConfig { q: self.q }
    }

    pub fn types(&self) -> Vec<ProjectionType> {
        self.projection_set.types()
    }

    pub fn extractor(&self) -> Result<FilterBankExtractor> {
        FilterBankExtractor::new(self.extractor.clone())
    }
}

/// A case after projection and feature extraction.
#[derive(Debug, Clone)]
pub struct PreparedCase {
    pub case_id: String,
    pub label: Label,
    pub ct_dims: crate::volume::Dims,
    pub spacing_mm: crate::volume::Spacing,
    pub lungs: LungPair,
    /// Projections in canonical order of the configured set.
    pub projections: Vec<(ProjectedImage, ProjectedMask)>,
    pub features: Vec<FeatureGrid>,
}

impl PreparedCase {
    pub fn sidecars(&self) -> Vec<ProjectionSidecar> {
        self.projections
            .iter()
            .map(|(img, _)| ProjectionSidecar {
                ptype: img.ptype,
                volume_dims: self.ct_dims,
                spacing_mm: self.spacing_mm,
                mapping: img.mapping,
            })
            .collect()
    }

    pub fn into_features(self) -> CaseFeatures {
        CaseFeatures {
            case_id: self.case_id,
            label: self.label,
            features: self.features,
        }
    }
}

/// Only the feature grids of a case, for repeated bank building.
#[derive(Debug, Clone)]
pub struct CaseFeatures {
    pub case_id: String,
    pub label: Label,
    pub features: Vec<FeatureGrid>,
}

impl CaseFeatures {
    fn grid(&self, p: ProjectionType) -> Result<&FeatureGrid> {
        self.features
            .iter()
            .find(|g| g.ptype == p)
            .ok_or_else(|| Error::ProjectionMismatch(format!("case {} has no {p} features", self.case_id)))
    }
}

/// Lung pair for a CT according to the configured source.
pub fn resolve_lungs(ct: &Volume, mask: Option<&Volume>, source: LungSource) -> Result<LungPair> {
    match source {
        LungSource::Manifest => {
            let m = mask.ok_or_else(|| Error::InvalidArgument("lung mask required".into()))?;
            ct.same_dims(m)?;
            split_left_right(m)
        }
        LungSource::Threshold => split_left_right(&threshold_segment_phantom(ct)?),
        LungSource::Unsegmented => LungPair::halves(ct.dims(), ct.spacing()),
    }
}

/// Projects and extracts features for an in-memory case.
pub fn prepare_volumes(
    case_id: &str,
    label: Label,
    ct: &Volume,
    mask: Option<&Volume>,
    cfg: &RunConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<PreparedCase> {
    let lungs = resolve_lungs(ct, mask, cfg.lungs)?;
    let projections = project_case(
        ct,
        &lungs,
        cfg.method,
        &cfg.types(),
        (cfg.hu_lo, cfg.hu_hi),
        cfg.canvas,
    )?;
    let features = projections
        .iter()
        .map(|(img, _)| extractor.extract(img))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedCase {
        case_id: case_id.to_string(),
        label,
        ct_dims: ct.dims(),
        spacing_mm: ct.spacing(),
        lungs,
        projections,
        features,
    })
}

/// Loads a manifest record's volumes and prepares the case.
pub fn prepare_record(
    manifest: &Manifest,
    record: &CaseRecord,
    cfg: &RunConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<PreparedCase> {
    let ct = load_volume(manifest.resolve(&record.volume_path))?;
    let mask = match cfg.lungs {
        LungSource::Manifest => Some(load_volume(manifest.resolve(&record.mask_path))?),
        _ => None,
    };
    prepare_volumes(&record.case_id, record.label, &ct, mask.as_ref(), cfg, extractor)
}

/// Features of every record, in manifest order.
pub fn extract_all(
    manifest: &Manifest,
    records: &[&CaseRecord],
    cfg: &RunConfig,
    extractor: &FilterBankExtractor,
) -> Result<Vec<CaseFeatures>> {
    records
        .par_iter()
        .map(|r| prepare_record(manifest, r, cfg, extractor).map(PreparedCase::into_features))
        .collect()
}

/// Builds one bank per projection type from training cases.
pub fn build_banks(train: &[&CaseFeatures], types: &[ProjectionType], coreset_frac: f64) -> Result<Vec<MemoryBank>> {
    if train.is_empty() {
        return Err(Error::InsufficientCases("no training cases".into()));
    }
    types
        .par_iter()
        .map(|&p| {
            let grids = train.iter().map(|c| c.grid(p)).collect::<Result<Vec<_>>>()?;
            build_bank(&aggregate_bank(&grids)?, coreset_frac)
        })
        .collect()
}

/// Trained banks plus optional score calibration.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: RunConfig,
    banks: Vec<IndexedBank>,
    calibration: Option<Calibration>,
}

impl Detector {
    /// Checks that the banks cover the configured set and match its
    /// extractor.
    pub fn new(cfg: RunConfig, banks: Vec<MemoryBank>, calibration: Option<Calibration>) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.extractor.hash();
        let mut ordered = Vec::new();
        for p in cfg.types() {
            let bank = banks
                .iter()
                .find(|b| b.ptype == p)
                .ok_or_else(|| Error::ProjectionMismatch(format!("no bank for {p}")))?;
            bank.check_extractor(&hash)?;
            ordered.push(IndexedBank::new(bank.clone()));
        }
        if let Some(cal) = &calibration {
            for p in cfg.types() {
                if !cal.bounds.contains_key(&p) {
                    return Err(Error::ProjectionMismatch(format!("calibration lacks {p}")));
                }
            }
        }
        Ok(Detector {
            cfg,
            banks: ordered,
            calibration,
        })
    }

    pub fn train(cfg: RunConfig, train: &[&CaseFeatures]) -> Result<Self> {
        let banks = build_banks(train, &cfg.types(), cfg.coreset_frac)?;
        Detector::new(cfg, banks, None)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn banks(&self) -> impl Iterator<Item = &MemoryBank> {
        self.banks.iter().map(IndexedBank::bank)
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    fn bank(&self, p: ProjectionType) -> Result<&IndexedBank> {
        self.banks
            .iter()
            .find(|b| b.bank().ptype == p)
            .ok_or_else(|| Error::ProjectionMismatch(format!("no bank for {p}")))
    }

    pub fn anomaly_maps(&self, features: &[FeatureGrid]) -> Result<Vec<AnomalyMap2D>> {
        self.cfg
            .types()
            .iter()
            .map(|&p| {
                let grid = features
                    .iter()
                    .find(|g| g.ptype == p)
                    .ok_or_else(|| Error::ProjectionMismatch(format!("no {p} features")))?;
                anomaly_map(grid, self.bank(p)?, &self.cfg.extractor, self.cfg.smoothing_sigma)
            })
            .collect()
    }

    /// Per-projection anomaly scores (map maxima).
    pub fn raw_scores(&self, features: &[FeatureGrid]) -> Result<BTreeMap<ProjectionType, f64>> {
        Ok(self
            .anomaly_maps(features)?
            .into_iter()
            .map(|m| (m.ptype, m.score as f64))
            .collect())
    }

    /// Fits calibration bounds on held-out normal cases.
    pub fn calibrate(&mut self, normals: &[&CaseFeatures]) -> Result<()> {
        let raw = normals
            .par_iter()
            .map(|c| self.raw_scores(&c.features))
            .collect::<Result<Vec<_>>>()?;
        self.calibration = Some(calibration_from_raw(&raw, &self.cfg.types())?);
        Ok(())
    }

    pub fn patient_score(&self, raw: &BTreeMap<ProjectionType, f64>) -> Result<f64> {
        let cal = self
            .calibration
            .as_ref()
            .ok_or_else(|| Error::Config("detector is not calibrated".into()))?;
        patient_score(raw, cal, &self.cfg.types())
    }

    pub fn score_case(&self, features: &[FeatureGrid]) -> Result<CaseScore> {
        let raw = self.raw_scores(features)?;
        let score = self.patient_score(&raw)?;
        Ok(CaseScore { score, raw })
    }

    /// Full 3D anomaly volume of a prepared case and its top-percentile
    /// binarization.
    pub fn localize(&self, case: &PreparedCase, gt: Option<&Volume>) -> Result<Localization> {
        let maps = self.anomaly_maps(&case.features)?;
        let norm = self.cfg.norm();
        let sidecars = case.sidecars();
        let mut per_side: BTreeMap<bool, Vec<AnomalyVolume>> = BTreeMap::new();
        for map in &maps {
            let (_, mask) = case
                .projections
                .iter()
                .find(|(img, _)| img.ptype == map.ptype)
                .ok_or_else(|| Error::ProjectionMismatch(format!("no {} projection", map.ptype)))?;
            let sidecar = sidecars
                .iter()
                .find(|s| s.ptype == map.ptype)
                .expect("sidecar per projection");
            let r = mask_normalize_2d(map, mask, norm)?;
            let u = reverse_project(&r, sidecar, case.lungs.side(map.ptype.side), norm)?;
            per_side.entry(map.ptype.side == Side::Right).or_default().push(u);
        }
        let fuse = |side: Side| -> Result<AnomalyVolume> {
            let parts = per_side
                .get(&(side == Side::Right))
                .ok_or_else(|| Error::ProjectionMismatch(format!("no projections for {side:?} lung")))?;
            let refs: Vec<&AnomalyVolume> = parts.iter().collect();
            fuse_per_lung(&refs, case.lungs.side(side), side)
        };
        let (u_r, u_l) = (fuse(Side::Right)?, fuse(Side::Left)?);
        let v = fuse_final(&u_r, &u_l, &case.lungs, norm)?;
        let region: Vec<bool> = case
            .lungs
            .right
            .foreground()?
            .iter()
            .zip(case.lungs.left.foreground()?)
            .map(|(&a, b)| a || b)
            .collect();
        let binary = binarize_top(&v, &region, self.cfg.localization_pct)?;
        let hit = gt.map(|g| localization_hit(&binary, g)).transpose()?;
        let (argmax_voxel, max_value) = v.argmax_zyx();
        Ok(Localization {
            volume: v,
            binary,
            report: LocalizationReport {
                argmax_voxel,
                max_value,
                hit,
            },
        })
    }
}

fn calibration_from_raw(raw: &[BTreeMap<ProjectionType, f64>], types: &[ProjectionType]) -> Result<Calibration> {
    let mut per: BTreeMap<ProjectionType, Vec<f64>> = BTreeMap::new();
    for r in raw {
        for p in types {
            let s = r
                .get(p)
                .ok_or_else(|| Error::ProjectionMismatch(format!("missing {p} score")))?;
            per.entry(*p).or_default().push(*s);
        }
    }
    calibrate(&per)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseScore {
    pub score: f64,
    pub raw: BTreeMap<ProjectionType, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub argmax_voxel: [usize; 3],
    pub max_value: f32,
    pub hit: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Localization {
    pub volume: AnomalyVolume,
    pub binary: Volume,
    pub report: LocalizationReport,
}

/// Raw scores of one fold, from which any projection subset can be
/// evaluated without rescoring.
#[derive(Debug, Clone)]
pub struct FoldScores {
    pub calibration: Vec<BTreeMap<ProjectionType, f64>>,
    pub test: Vec<(String, BTreeMap<ProjectionType, f64>, bool)>,
}

/// Trains banks on the fold's training cases and scores its calibration
/// and test cases.
pub fn score_fold(cases: &[CaseFeatures], split: &FoldSplit, cfg: &RunConfig) -> Result<FoldScores> {
    let pick = |idx: &[usize]| idx.iter().map(|&i| &cases[i]).collect::<Vec<_>>();
    let det = Detector::train(cfg.clone(), &pick(&split.train))?;
    let calibration = pick(&split.calibration)
        .par_iter()
        .map(|c| det.raw_scores(&c.features))
        .collect::<Result<Vec<_>>>()?;
    let test_idx: Vec<usize> = split.test_normal.iter().chain(&split.test_abnormal).copied().collect();
    let test = test_idx
        .par_iter()
        .map(|&i| {
            let c = &cases[i];
            det.raw_scores(&c.features)
                .map(|raw| (c.case_id.clone(), raw, c.label.is_abnormal()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldScores { calibration, test })
}

/// Patient-level scores of a fold's test cases using only `types`.
pub fn fold_patient_scores(fs: &FoldScores, types: &[ProjectionType]) -> Result<Vec<(f64, bool)>> {
    let cal = calibration_from_raw(&fs.calibration, types)?;
    fs.test
        .iter()
        .map(|(_, raw, abnormal)| Ok((patient_score(raw, &cal, types)?, *abnormal)))
        .collect()
}

pub fn fold_metrics(fs: &FoldScores, types: &[ProjectionType]) -> Result<FoldMetrics> {
    Ok(evaluate_scores(&fold_patient_scores(fs, types)?)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub folds: Vec<FoldMetrics>,
    pub summary: FoldSummary,
}

/// Seeded Monte Carlo validation over pre-extracted case features.
pub fn monte_carlo_eval(
    cases: &[CaseFeatures],
    cfg: &RunConfig,
    folds: usize,
    sizes: SplitSizes,
) -> Result<MonteCarloReport> {
    let normals: Vec<usize> = (0..cases.len()).filter(|&i| !cases[i].label.is_abnormal()).collect();
    let abnormals: Vec<usize> = (0..cases.len()).filter(|&i| cases[i].label.is_abnormal()).collect();
    let splits = monte_carlo_splits(&normals, &abnormals, folds, cfg.seed, sizes)?;
    let folds = splits
        .iter()
        .map(|s| fold_metrics(&score_fold(cases, s, cfg)?, &cfg.types()))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&folds);
    Ok(MonteCarloReport { folds, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&json).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
        assert_eq!(cfg.types().len(), 6);
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::from_json(r#"{"q": 100}"#).is_err());
        assert!(RunConfig::from_json(r#"{"hu_lo": 0, "hu_hi": -800}"#).is_err());
        assert!(RunConfig::from_json(r#"{"coreset_frac": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"canvas": [12, 12]}"#).is_err());
        let c = RunConfig::from_json(r#"{"projection_set": "coronal-only", "method": "aip"}"#).unwrap();
        assert_eq!(c.types().len(), 2);
        assert_eq!(c.method, ProjectionMethod::Aip);
    }
}
