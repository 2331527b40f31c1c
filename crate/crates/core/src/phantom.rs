//! Seeded synthetic chest phantoms.
//!
//! A phantom is an elliptic body cylinder of soft tissue (+40 HU) in air
//! (−1000 HU), holding two disjoint ellipsoidal lungs (−850 HU, σ = 30 HU
//! noise) threaded with curved vessel tubes in `[-200, -150]` HU. Abnormal
//! phantoms add Gaussian blobs inside a lung and return their ground-truth
//! mask.
//!
//! Geometry, noise and anomalies draw from independent ChaCha streams of the
//! same seed, so an abnormal phantom equals the normal phantom of the same
//! seed everywhere outside its anomaly mask.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{CaseRecord, Label, Manifest};
use crate::mvol::save_volume;
use crate::volume::{linear_index, voxel_count, Dims, Volume, AIR_HU};

pub const BODY_HU: f64 = 40.0;
pub const LUNG_HU: f64 = -850.0;
pub const NOISE_SIGMA_HU: f64 = 30.0;
pub const MIN_DIMS: Dims = [32, 48, 48];

const GEOMETRY_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const ANOMALY_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    /// Blob radius in voxels, `[2, 6]`.
    pub radius_vox: f64,
    /// Blob peak intensity in HU, `[-400, -100]`.
    pub intensity_hu: f64,
    pub count: usize,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        AnomalySpec {
            radius_vox: 5.0,
            intensity_hu: -100.0,
            count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub seed: u64,
    pub vessel_count: usize,
    pub anomaly: Option<AnomalySpec>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [64, 96, 96],
            seed: 0,
            vessel_count: 12,
            anomaly: None,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().zip(MIN_DIMS).any(|(&d, m)| d < m) {
            return Err(Error::InvalidArgument(format!(
                "phantom dims {:?} below minimum {MIN_DIMS:?}",
                self.dims
            )));
        }
        if let Some(a) = &self.anomaly {
            if !(2.0..=6.0).contains(&a.radius_vox) {
                return Err(Error::InvalidArgument(format!(
                    "anomaly radius {} outside [2, 6]",
                    a.radius_vox
                )));
            }
            if !(-400.0..=-100.0).contains(&a.intensity_hu) {
                return Err(Error::InvalidArgument(format!(
                    "anomaly intensity {} outside [-400, -100] HU",
                    a.intensity_hu
                )));
            }
            if a.count == 0 {
                return Err(Error::InvalidArgument("anomaly count must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub ct: Volume,
    /// Lung labels: 1 right (low x), 2 left.
    pub lungs: Volume,
    pub anomaly: Option<Volume>,
}

/// Axis-aligned ellipsoid in voxel coordinates.
#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
}

impl Ellipsoid {
    fn norm2(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi[a]).powi(2))
            .sum()
    }

    /// Point at normalized coordinates `u` (unit ball → ellipsoid).
    fn at(&self, u: [f64; 3]) -> [f64; 3] {
        [
            self.center[0] + u[0] * self.semi[0],
            self.center[1] + u[1] * self.semi[1],
            self.center[2] + u[2] * self.semi[2],
        ]
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: f64, spread: f64) -> f64 {
    base + rng.random_range(-spread..=spread)
}

fn lungs_for(dims: Dims, rng: &mut ChaCha8Rng) -> [Ellipsoid; 2] {
    let [z, y, x] = dims.map(|d| d as f64);
    let make = |rng: &mut ChaCha8Rng, cx: f64| Ellipsoid {
        center: [
            jitter(rng, 0.5, 0.02) * z,
            jitter(rng, 0.5, 0.02) * y,
            jitter(rng, cx, 0.02) * x,
        ],
        semi: [
            jitter(rng, 0.38, 0.03) * z,
            jitter(rng, 0.30, 0.02) * y,
            jitter(rng, 0.15, 0.01) * x,
        ],
    };
    let right = make(rng, 0.30);
    let left = make(rng, 0.70);
    [right, left]
}

fn unit_ball_point(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    loop {
        let p = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        if p.iter().map(|v: &f64| v * v).sum::<f64>() <= 1.0 {
            return p.map(|v| v * radius);
        }
    }
}

/// Voxels within `radius` of `center`, clipped to the grid.
fn for_each_in_ball(dims: Dims, center: [f64; 3], radius: f64, mut f: impl FnMut(usize, f64)) {
    let lo = |a: usize| ((center[a] - radius).floor().max(0.0)) as usize;
    let hi = |a: usize| ((center[a] + radius).ceil() as usize).min(dims[a] - 1);
    for z in lo(0)..=hi(0) {
        for y in lo(1)..=hi(1) {
            for x in lo(2)..=hi(2) {
                let d2 = (z as f64 - center[0]).powi(2)
                    + (y as f64 - center[1]).powi(2)
                    + (x as f64 - center[2]).powi(2);
                if d2 <= radius * radius {
                    f(linear_index(dims, z, y, x), d2.sqrt());
                }
            }
        }
    }
}

fn bezier(p: &[[f64; 3]; 3], t: f64) -> [f64; 3] {
    let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * (1.0 - t) * t, t * t);
    [0, 1, 2].map(|k| a * p[0][k] + b * p[1][k] + c * p[2][k])
}

fn clamp_hu(v: f64) -> i16 {
    v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Generates one phantom case. Identical configs yield identical volumes.
pub fn generate_case(cfg: &PhantomConfig) -> Result<PhantomCase> {
    cfg.validate()?;
    let dims = cfg.dims;
    let n = voxel_count(dims);
    let spacing = [1.0, 1.0, 1.0];

    let mut geo = ChaCha8Rng::seed_from_u64(cfg.seed);
    geo.set_stream(GEOMETRY_STREAM);
    let lungs = lungs_for(dims, &mut geo);

    let [_, yf, xf] = dims.map(|d| d as f64);
    let body_semi = [0.42 * yf, 0.46 * xf];
    let body_center = [0.5 * yf, 0.5 * xf];

    let mut labels = vec![0u8; n];
    let mut hu = vec![0f64; n];
    let mut noisy = vec![false; n];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let i = linear_index(dims, z, y, x);
                let p = [z as f64, y as f64, x as f64];
                let by = (p[1] - body_center[0]) / body_semi[0];
                let bx = (p[2] - body_center[1]) / body_semi[1];
                let in_body = by * by + bx * bx <= 1.0 && z >= 1 && z + 1 < dims[0];
                if let Some(k) = lungs.iter().position(|e| e.norm2(p) <= 1.0) {
                    labels[i] = k as u8 + 1;
                    hu[i] = LUNG_HU;
                    noisy[i] = true;
                } else if in_body {
                    hu[i] = BODY_HU;
                    noisy[i] = true;
                } else {
                    hu[i] = AIR_HU as f64;
                }
            }
        }
    }

    // Vessels: quadratic Bézier tubes kept well inside their lung so the
    // lung boundary stays smooth.
    let mut vessel = vec![f64::NEG_INFINITY; n];
    for v in 0..cfg.vessel_count {
        let lung = &lungs[v % 2];
        let ctrl = [
            lung.at(unit_ball_point(&mut geo, 0.7)),
            lung.at(unit_ball_point(&mut geo, 0.7)),
            lung.at(unit_ball_point(&mut geo, 0.7)),
        ];
        let radius = geo.random_range(0.8..1.6);
        let value = geo.random_range(-200.0..-150.0);
        let len: f64 = (0..3)
            .map(|a| (ctrl[0][a] - ctrl[1][a]).abs() + (ctrl[1][a] - ctrl[2][a]).abs())
            .sum();
        let steps = ((len / 0.25).ceil() as usize).max(2);
        for s in 0..=steps {
            let c = bezier(&ctrl, s as f64 / steps as f64);
            for_each_in_ball(dims, c, radius, |i, _| {
                if labels[i] != 0 {
                    vessel[i] = vessel[i].max(value);
                }
            });
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(NOISE_STREAM);
    let normal = Normal::new(0.0, NOISE_SIGMA_HU).expect("positive sigma");
    for i in 0..n {
        if noisy[i] {
            hu[i] += normal.sample(&mut noise_rng);
        }
        if vessel[i].is_finite() {
            hu[i] = vessel[i];
        }
    }

    let anomaly = match &cfg.anomaly {
        None => None,
        Some(spec) => Some(add_anomalies(cfg.seed, dims, &lungs, &labels, spec, &mut hu)?),
    };

    let ct = Volume::from_i16(dims, spacing, hu.into_iter().map(clamp_hu).collect())?;
    let lungs = Volume::from_u8(dims, spacing, labels)?;
    let anomaly = anomaly
        .map(|m| Volume::from_mask(dims, spacing, &m))
        .transpose()?;
    Ok(PhantomCase { ct, lungs, anomaly })
}

fn add_anomalies(
    seed: u64,
    dims: Dims,
    lungs: &[Ellipsoid; 2],
    labels: &[u8],
    spec: &AnomalySpec,
    hu: &mut [f64],
) -> Result<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ANOMALY_STREAM);
    let mut gt = vec![false; hu.len()];
    let radius = spec.radius_vox;
    let sigma = radius / 2.0;
    for _ in 0..spec.count {
        let side = rng.random_range(0..2usize);
        let lung = &lungs[side];
        let label = side as u8 + 1;
        let mut placed = None;
        for _ in 0..1000 {
            let c = lung.at(unit_ball_point(&mut rng, 0.8));
            // The blob plus a one-voxel shell must lie inside the lung so the
            // lung mask encloses it.
            let mut fits = true;
            for_each_in_ball(dims, c, radius + 1.0, |i, _| fits &= labels[i] == label);
            let inside_grid = (0..3).all(|a| {
                c[a] - radius - 1.0 >= 0.0 && c[a] + radius + 1.0 <= (dims[a] - 1) as f64
            });
            if fits && inside_grid {
                placed = Some(c);
                break;
            }
        }
        let c = placed.ok_or_else(|| {
            Error::AnomalyDoesNotFit(format!("no position for radius {radius} blob in lung"))
        })?;
        for_each_in_ball(dims, c, radius, |i, r| {
            let v = LUNG_HU + (spec.intensity_hu - LUNG_HU) * (-r * r / (2.0 * sigma * sigma)).exp();
            hu[i] = hu[i].max(v);
            gt[i] = true;
        });
    }
    Ok(gt)
}

/// Default per-case configuration used by [`generate_dataset`].
pub fn dataset_case_config(seed: u64, abnormal: bool) -> PhantomConfig {
    PhantomConfig {
        seed,
        anomaly: abnormal.then(AnomalySpec::default),
        ..PhantomConfig::default()
    }
}

/// Writes `n_normal` normal then `n_abnormal` abnormal phantoms with their
/// masks, plus `manifest.csv`. Case `i` uses seed `seed + i`.
pub fn generate_dataset(
    n_normal: usize,
    n_abnormal: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    generate_dataset_with(n_normal, n_abnormal, seed, out_dir, dataset_case_config)
}

pub fn generate_dataset_with(
    n_normal: usize,
    n_abnormal: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
    case_config: impl Fn(u64, bool) -> PhantomConfig + Sync,
) -> Result<PathBuf> {
    use rayon::prelude::*;

    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let records: Vec<CaseRecord> = (0..n_normal + n_abnormal)
        .into_par_iter()
        .map(|i| -> Result<CaseRecord> {
            let abnormal = i >= n_normal;
            let cfg = case_config(seed.wrapping_add(i as u64), abnormal);
            let case = generate_case(&cfg)?;
            let id = format!("case_{i:04}");
            let volume_path = format!("{id}_ct.mvol");
            let mask_path = format!("{id}_lungs.mvol");
            save_volume(&case.ct, out.join(&volume_path))?;
            save_volume(&case.lungs, out.join(&mask_path))?;
            let anomaly_gt_path = match &case.anomaly {
                Some(gt) => {
                    let p = format!("{id}_gt.mvol");
                    save_volume(gt, out.join(&p))?;
                    Some(p)
                }
                None => None,
            };
            Ok(CaseRecord {
                case_id: id,
                volume_path,
                mask_path,
                label: if abnormal { Label::Abnormal } else { Label::Normal },
                anomaly_gt_path,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(out, records)?;
    let path = out.join("manifest.csv");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(seed: u64, anomaly: Option<AnomalySpec>) -> PhantomCase {
        generate_case(&PhantomConfig {
            dims: MIN_DIMS,
            seed,
            vessel_count: 8,
            anomaly,
        })
        .unwrap()
    }

    #[test]
    fn deterministic() {
        let a = case(11, Some(AnomalySpec::default()));
        let b = case(11, Some(AnomalySpec::default()));
        assert_eq!(a.ct, b.ct);
        assert_eq!(a.lungs, b.lungs);
        assert_eq!(a.anomaly, b.anomaly);
        assert_ne!(case(12, None).ct, a.ct);
    }

    #[test]
    fn normal_case_has_two_disjoint_lungs() {
        let c = case(3, None);
        assert!(c.anomaly.is_none());
        let l = c.lungs.as_u8().unwrap();
        assert!(l.contains(&1) && l.contains(&2));
        // Labels are exclusive per voxel by construction; check boundary.
        let dims = c.lungs.dims();
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let edge = z == 0 || y == 0 || x == 0 || z + 1 == dims[0] || y + 1 == dims[1] || x + 1 == dims[2];
                    if edge {
                        assert_eq!(l[linear_index(dims, z, y, x)], 0);
                    }
                }
            }
        }
    }

    #[test]
    fn lung_centroids_are_separated() {
        let c = case(5, None);
        let dims = c.lungs.dims();
        let l = c.lungs.as_u8().unwrap();
        let mean_x = |label: u8| {
            let xs: Vec<f64> = (0..l.len())
                .filter(|&i| l[i] == label)
                .map(|i| (i % dims[2]) as f64)
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        assert!(mean_x(2) - mean_x(1) >= dims[2] as f64 / 4.0);
    }

    #[test]
    fn anomaly_peak_survives_truncation() {
        let c = case(7, Some(AnomalySpec::default()));
        let gt = c.anomaly.as_ref().unwrap().as_u8().unwrap();
        let hu = c.ct.as_i16().unwrap();
        let peak = (0..hu.len()).filter(|&i| gt[i] == 1).map(|i| hu[i]).max().unwrap();
        assert!(peak > -800 && peak < 0, "peak {peak}");
    }

    #[test]
    fn abnormal_differs_only_inside_dilated_gt() {
        let spec = AnomalySpec {
            radius_vox: 3.0,
            intensity_hu: -150.0,
            count: 2,
        };
        let normal = case(21, None);
        let abnormal = case(21, Some(spec));
        let dims = normal.ct.dims();
        let gt = abnormal.anomaly.unwrap().foreground().unwrap();
        let grown = crate::labeling::dilate(&gt, dims, 1);
        let (a, b) = (normal.ct.as_i16().unwrap(), abnormal.ct.as_i16().unwrap());
        for i in 0..a.len() {
            if a[i] != b[i] {
                assert!(grown[i]);
            }
        }
        assert_eq!(normal.lungs, abnormal.lungs);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = PhantomConfig {
            dims: [16, 48, 48],
            ..Default::default()
        };
        assert!(generate_case(&cfg).is_err());
        cfg.dims = MIN_DIMS;
        cfg.anomaly = Some(AnomalySpec {
            radius_vox: 7.0,
            ..Default::default()
        });
        assert!(generate_case(&cfg).is_err());
        cfg.anomaly = Some(AnomalySpec {
            intensity_hu: -600.0,
            ..Default::default()
        });
        assert!(generate_case(&cfg).is_err());
    }

    #[test]
    fn dataset_layout() {
        let dir = tempfile::tempdir().unwrap();
        let empty = generate_dataset(0, 0, 1, dir.path().join("e")).unwrap();
        assert_eq!(
            fs::read_to_string(&empty).unwrap(),
            "case_id,volume_path,mask_path,label,anomaly_gt_path\n"
        );

        let small = |seed, abnormal| PhantomConfig {
            dims: MIN_DIMS,
            ..dataset_case_config(seed, abnormal)
        };
        let m1 = generate_dataset_with(2, 1, 9, dir.path().join("a"), small).unwrap();
        let m2 = generate_dataset_with(2, 1, 9, dir.path().join("b"), small).unwrap();
        let man = Manifest::load(&m1).unwrap();
        let labels: Vec<_> = man.records.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![Label::Normal, Label::Normal, Label::Abnormal]);
        assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
        for r in &man.records {
            let f = |p: &str| fs::read(dir.path().join("a").join(p)).unwrap();
            let g = |p: &str| fs::read(dir.path().join("b").join(p)).unwrap();
            assert_eq!(f(&r.volume_path), g(&r.volume_path));
            assert_eq!(f(&r.mask_path), g(&r.mask_path));
        }
    }
}
