//! Nominal feature banks, coreset subsampling and nearest-neighbour scoring.
//!
//! Bank file layout (MBNK1): one JSON header line
//! `{"magic":"MBNK1","projection":...,"feature_dim":D,"count":C,"extractor_hash":...,"coreset_frac":...,"source_count":N}`
//! followed by `C·D` little-endian f32 values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cell_center, ExtractorConfig, FeatureGrid};
use crate::grid::{gaussian_blur, Grid2};
use crate::kdtree::{sq_dist, KdTree};
use crate::projection::ProjectionType;

pub const MAGIC: &str = "MBNK1";
pub const DEFAULT_CORESET_FRAC: f64 = 0.10;
pub const DEFAULT_SMOOTHING_SIGMA: f64 = 4.0;

/// Concatenated training features for one projection type.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub ptype: ProjectionType,
    pub feature_dim: usize,
    pub extractor_hash: String,
    pub data: Vec<f32>,
}

impl RawFeatures {
    pub fn len(&self) -> usize {
        self.data.len() / self.feature_dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub ptype: ProjectionType,
    pub feature_dim: usize,
    /// `count()·feature_dim` values.
    pub entries: Vec<f32>,
    pub extractor_hash: String,
    pub coreset_frac: f64,
    pub source_count: usize,
}

impl MemoryBank {
    pub fn count(&self) -> usize {
        self.entries.len() / self.feature_dim
    }

    pub fn entry(&self, k: usize) -> &[f32] {
        &self.entries[k * self.feature_dim..(k + 1) * self.feature_dim]
    }

    pub fn check_extractor(&self, hash: &str) -> Result<()> {
        if self.extractor_hash != hash {
            return Err(Error::ExtractorMismatch {
                expected: hash.to_string(),
                found: self.extractor_hash.clone(),
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.entries.is_empty() || !self.entries.len().is_multiple_of(self.feature_dim) {
            return Err(Error::BankFormat(format!(
                "{} values do not form a non-empty bank of dim {}",
                self.entries.len(),
                self.feature_dim
            )));
        }
        if self.count() > self.source_count {
            return Err(Error::BankFormat(format!(
                "count {} exceeds source_count {}",
                self.count(),
                self.source_count
            )));
        }
        if !(self.coreset_frac > 0.0 && self.coreset_frac <= 1.0) {
            return Err(Error::BankFormat(format!("coreset_frac {} not in (0,1]", self.coreset_frac)));
        }
        if self.entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::BankFormat("non-finite bank entry".into()));
        }
        Ok(())
    }
}

/// Concatenates all locations of all grids, keeping duplicates.
pub fn aggregate_bank(grids: &[&FeatureGrid]) -> Result<RawFeatures> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training grids".into()))?;
    let mut data = Vec::with_capacity(grids.iter().map(|g| g.features.len()).sum());
    for g in grids {
        if g.ptype != first.ptype {
            return Err(Error::ProjectionMismatch(format!(
                "grid {} mixed with {}",
                g.ptype, first.ptype
            )));
        }
        if g.extractor_hash != first.extractor_hash {
            return Err(Error::ExtractorMismatch {
                expected: first.extractor_hash.clone(),
                found: g.extractor_hash.clone(),
            });
        }
        if g.feature_dim != first.feature_dim {
            return Err(Error::DimMismatch(format!(
                "feature dim {} vs {}",
                g.feature_dim, first.feature_dim
            )));
        }
        data.extend_from_slice(&g.features);
    }
    Ok(RawFeatures {
        ptype: first.ptype,
        feature_dim: first.feature_dim,
        extractor_hash: first.extractor_hash.clone(),
        data,
    })
}

/// Coreset size for `n` source features: `ceil(frac·n)`, at least 1.
pub fn coreset_size(n: usize, frac: f64) -> usize {
    ((frac * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Greedy k-center selection.
///
/// The first center is the point farthest from the mean; each further center
/// is the point farthest from its nearest chosen center. Ties go to the
/// lowest index. Points are grouped by their current nearest center and a
/// group is skipped when the triangle inequality shows the new center cannot
/// come strictly closer to any member, which leaves the result identical to
/// the plain O(N·C) loop.
pub fn greedy_coreset(points: &[f32], dim: usize, c: usize) -> Result<Vec<usize>> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::DimMismatch(format!("{} values, dim {dim}", points.len())));
    }
    let n = points.len() / dim;
    if c == 0 || c > n {
        return Err(Error::InvalidArgument(format!("coreset size {c} not in 1..={n}")));
    }
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut mean = vec![0f64; dim];
    for p in points.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v as f64;
        }
    }
    let mean: Vec<f64> = mean.iter().map(|m| m / n as f64).collect();
    let mut first = (f64::NEG_INFINITY, 0usize);
    for i in 0..n {
        let d: f64 = pt(i).iter().zip(&mean).map(|(&v, m)| (v as f64 - m).powi(2)).sum();
        if d > first.0 {
            first = (d, i);
        }
    }

    struct Cluster {
        center: usize,
        members: Vec<usize>,
        /// Largest member distance and its lowest-index holder.
        far: (f64, usize),
    }
    fn farthest(members: &[usize], d2: &[f64]) -> (f64, usize) {
        let mut far = (f64::NEG_INFINITY, usize::MAX);
        for &i in members {
            if d2[i] > far.0 || (d2[i] == far.0 && i < far.1) {
                far = (d2[i], i);
            }
        }
        far
    }

    // Chosen centers carry -1 so they are never selected again.
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(pt(i), pt(first.1))).collect();
    d2[first.1] = -1.0;
    let members: Vec<usize> = (0..n).collect();
    let far = farthest(&members, &d2);
    let mut clusters = vec![Cluster {
        center: first.1,
        members,
        far,
    }];
    let mut chosen = vec![first.1];

    while chosen.len() < c {
        let mut pick = (f64::NEG_INFINITY, usize::MAX);
        for cl in &clusters {
            if cl.far.0 > pick.0 || (cl.far.0 == pick.0 && cl.far.1 < pick.1) {
                pick = cl.far;
            }
        }
        let new = pick.1;
        chosen.push(new);
        let q = pt(new);
        let mut moved = vec![new];
        d2[new] = -1.0;
        for cl in clusters.iter_mut() {
            let r2 = cl.far.0.max(0.0);
            let dc2 = sq_dist(pt(cl.center), q);
            // skip when d(center, new) >= 2·radius, with slack for rounding
            if dc2 > 4.0 * r2 * (1.0 + 1e-9) + 1e-30 {
                continue;
            }
            let before = cl.members.len();
            cl.members.retain(|&i| {
                if i == new {
                    return false;
                }
                let d = sq_dist(pt(i), q);
                if d < d2[i] {
                    d2[i] = d;
                    moved.push(i);
                    false
                } else {
                    true
                }
            });
            if cl.members.len() != before {
                cl.far = farthest(&cl.members, &d2);
            }
        }
        moved.sort_unstable();
        let far = farthest(&moved, &d2);
        clusters.push(Cluster {
            center: new,
            members: moved,
            far,
        });
    }
    Ok(chosen)
}

/// Builds a bank by coreset-subsampling aggregated features.
pub fn build_bank(raw: &RawFeatures, coreset_frac: f64) -> Result<MemoryBank> {
    if !(coreset_frac > 0.0 && coreset_frac <= 1.0) {
        return Err(Error::Config(format!("coreset_frac {coreset_frac} not in (0,1]")));
    }
    let n = raw.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no training features".into()));
    }
    let d = raw.feature_dim;
    let entries = if coreset_frac >= 1.0 {
        raw.data.clone()
    } else {
        let idx = greedy_coreset(&raw.data, d, coreset_size(n, coreset_frac))?;
        idx.iter()
            .flat_map(|&i| raw.data[i * d..(i + 1) * d].iter().copied())
            .collect()
    };
    Ok(MemoryBank {
        ptype: raw.ptype,
        feature_dim: d,
        entries,
        extractor_hash: raw.extractor_hash.clone(),
        coreset_frac,
        source_count: n,
    })
}

/// Exhaustive nearest neighbour: `(distance, index)`, ties to the lowest index.
pub fn nn_distance(query: &[f32], bank: &MemoryBank) -> Result<(f64, usize)> {
    if query.len() != bank.feature_dim {
        return Err(Error::DimMismatch(format!(
            "query dim {} vs bank dim {}",
            query.len(),
            bank.feature_dim
        )));
    }
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, e) in bank.entries.chunks_exact(bank.feature_dim).enumerate() {
        let d = sq_dist(query, e);
        if d < best.0 {
            best = (d, i);
        }
    }
    if best.1 == usize::MAX {
        return Err(Error::InvalidArgument("empty bank".into()));
    }
    Ok((best.0.sqrt(), best.1))
}

/// A bank with a search index for repeated scoring.
#[derive(Debug, Clone)]
pub struct IndexedBank {
    bank: MemoryBank,
    tree: KdTree,
}

impl IndexedBank {
    pub fn new(bank: MemoryBank) -> Self {
        let tree = KdTree::new(&bank.entries, bank.feature_dim);
        IndexedBank { bank, tree }
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    /// Same contract as [`nn_distance`].
    pub fn nearest(&self, query: &[f32]) -> Result<(f64, usize)> {
        if query.len() != self.bank.feature_dim {
            return Err(Error::DimMismatch(format!(
                "query dim {} vs bank dim {}",
                query.len(),
                self.bank.feature_dim
            )));
        }
        self.tree
            .nearest(query)
            .map(|(d, i)| (d.sqrt(), i))
            .ok_or_else(|| Error::InvalidArgument("empty bank".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap2D {
    pub ptype: ProjectionType,
    pub pixels: Grid2<f32>,
    pub score: f32,
}

/// Per-location nearest-neighbour distances on the feature grid.
pub fn distance_grid(test: &FeatureGrid, bank: &IndexedBank) -> Result<Grid2<f32>> {
    let b = bank.bank();
    if test.ptype != b.ptype {
        return Err(Error::ProjectionMismatch(format!(
            "grid {} scored against bank {}",
            test.ptype, b.ptype
        )));
    }
    b.check_extractor(&test.extractor_hash)?;
    let mut out = Grid2::filled(test.grid_dims.0, test.grid_dims.1, 0f32);
    for (k, f) in test.iter().enumerate() {
        out.data[k] = bank.nearest(f)?.0 as f32;
    }
    Ok(out)
}

/// Paints a distance grid at canvas resolution: bilinear interpolation
/// between cell centres (edge values extend outward), then Gaussian
/// smoothing. `sigma = 0` disables smoothing.
pub fn upsample_distances(
    dist: &Grid2<f32>,
    cfg: &ExtractorConfig,
    canvas: (usize, usize),
    sigma: f64,
) -> Grid2<f32> {
    let (c0r, c0c) = cell_center((0, 0), cfg);
    let s = cfg.stride as f64;
    let mut up = Grid2::filled(canvas.0, canvas.1, 0f32);
    for r in 0..canvas.0 {
        let gr = (r as f64 - c0r as f64) / s;
        for c in 0..canvas.1 {
            let gc = (c as f64 - c0c as f64) / s;
            up.set(r, c, dist.sample_bilinear(gr, gc));
        }
    }
    gaussian_blur(&up, sigma)
}

pub fn anomaly_map(
    test: &FeatureGrid,
    bank: &IndexedBank,
    cfg: &ExtractorConfig,
    smoothing_sigma: f64,
) -> Result<AnomalyMap2D> {
    let dist = distance_grid(test, bank)?;
    let pixels = upsample_distances(&dist, cfg, test.canvas, smoothing_sigma);
    let score = pixels.max();
    Ok(AnomalyMap2D {
        ptype: test.ptype,
        pixels,
        score,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    projection: ProjectionType,
    feature_dim: usize,
    count: usize,
    extractor_hash: String,
    coreset_frac: f64,
    source_count: usize,
}

pub fn encode_bank(bank: &MemoryBank) -> Result<Vec<u8>> {
    bank.validate()?;
    let header = Header {
        magic: MAGIC.into(),
        projection: bank.ptype,
        feature_dim: bank.feature_dim,
        count: bank.count(),
        extractor_hash: bank.extractor_hash.clone(),
        coreset_frac: bank.coreset_frac,
        source_count: bank.source_count,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(bank.entries.len() * 4);
    for v in &bank.entries {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_bank(bytes: &[u8]) -> Result<MemoryBank> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::BankFormat("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::BankFormat(format!("bad header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::BankFormat(format!("bad magic {:?}", header.magic)));
    }
    let payload = &bytes[nl + 1..];
    let expected = header
        .count
        .checked_mul(header.feature_dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::BankFormat("header sizes overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            actual: payload.len(),
        });
    }
    let entries = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let bank = MemoryBank {
        ptype: header.projection,
        feature_dim: header.feature_dim,
        entries,
        extractor_hash: header.extractor_hash,
        coreset_frac: header.coreset_frac,
        source_count: header.source_count,
    };
    bank.validate()?;
    Ok(bank)
}

pub fn save_bank(bank: &MemoryBank, path: &Path) -> Result<()> {
    let bytes = encode_bank(bank)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_bank(path: &Path) -> Result<MemoryBank> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&bytes)
}

/// Conventional bank file name for a projection type.
pub fn bank_file_name(ptype: ProjectionType) -> String {
    format!("{ptype}.mbnk")
}
