//! Local patch descriptors on a regular grid.
//!
//! The default extractor is a deterministic multi-scale filter bank. For
//! grid cell `(i, j)` and scale `s`, the cell's footprint is the canvas
//! square of side `s·P` anchored at `(i·stride, j·stride)`; it is
//! block-averaged down to a `P×P` patch (canvas reads beyond the border
//! reflect). Each filter is correlated with the patch (reflecting at the
//! patch border) and the response is summarized by its mean and population
//! standard deviation. Features are concatenated in (scale, filter, stat)
//! order, so the default configuration yields 2 · 5 · 2 = 20 values.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{reflect, Grid2};
use crate::projection::{ProjectedImage, ProjectionType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Filter {
    Identity,
    /// Gaussian, σ = 1, radius 2, normalized to unit sum.
    Gaussian,
    SobelX,
    SobelY,
    Laplacian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Mean,
    Std,
}

/// Sparse correlation kernel: `(dr, dc, weight)` taps.
type Kernel = Vec<(isize, isize, f64)>;

/// Largest kernel radius in the bank.
const PAD: usize = 2;

impl Filter {
    pub const BANK: [Filter; 5] = [
        Filter::Identity,
        Filter::Gaussian,
        Filter::SobelX,
        Filter::SobelY,
        Filter::Laplacian,
    ];

    pub fn kernel(self) -> Kernel {
        let dense = |rows: &[[f64; 3]; 3]| -> Kernel {
            let mut k = Vec::new();
            for (r, row) in rows.iter().enumerate() {
                for (c, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        k.push((r as isize - 1, c as isize - 1, w));
                    }
                }
            }
            k
        };
        match self {
            Filter::Identity => vec![(0, 0, 1.0)],
            Filter::Gaussian => {
                let mut k = Vec::with_capacity(25);
                let mut sum = 0.0;
                for dr in -2isize..=2 {
                    for dc in -2isize..=2 {
                        let w = (-((dr * dr + dc * dc) as f64) / 2.0).exp();
                        sum += w;
                        k.push((dr, dc, w));
                    }
                }
                k.iter_mut().for_each(|t| t.2 /= sum);
                k
            }
            Filter::SobelX => dense(&[[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]),
            Filter::SobelY => dense(&[[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]),
            Filter::Laplacian => dense(&[[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub scales: Vec<usize>,
    pub filter_bank: Vec<Filter>,
    pub stats: Vec<Stat>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            patch_size: 9,
            stride: 4,
            scales: vec![1, 2],
            filter_bank: Filter::BANK.to_vec(),
            stats: vec![Stat::Mean, Stat::Std],
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size.is_multiple_of(2) || self.patch_size == 0 {
            return Err(Error::Config(format!(
                "patch_size must be odd, got {}",
                self.patch_size
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::Config(format!("invalid scales {:?}", self.scales)));
        }
        if self.filter_bank.is_empty() || self.stats.is_empty() {
            return Err(Error::Config("filter bank and stats must be non-empty".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.filter_bank.len() * self.scales.len() * self.stats.len()
    }

    /// Grid extent `(H', W')` for a canvas.
    pub fn grid_dims(&self, canvas: (usize, usize)) -> (usize, usize) {
        let n = |len: usize| {
            if len < self.patch_size {
                0
            } else {
                (len - self.patch_size) / self.stride + 1
            }
        };
        (n(canvas.0), n(canvas.1))
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Inclusive canvas pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

/// Scale-1 footprint of grid cell `loc`.
pub fn grid_to_pixel(loc: (usize, usize), cfg: &ExtractorConfig, canvas: (usize, usize)) -> Result<PixelRect> {
    let (gh, gw) = cfg.grid_dims(canvas);
    if loc.0 >= gh || loc.1 >= gw {
        return Err(Error::InvalidArgument(format!(
            "grid location {loc:?} outside {gh}x{gw} grid"
        )));
    }
    let (r0, c0) = (loc.0 * cfg.stride, loc.1 * cfg.stride);
    Ok(PixelRect {
        r0,
        c0,
        r1: r0 + cfg.patch_size - 1,
        c1: c0 + cfg.patch_size - 1,
    })
}

/// Canvas pixel at the centre of grid cell `loc`.
pub fn cell_center(loc: (usize, usize), cfg: &ExtractorConfig) -> (usize, usize) {
    let half = cfg.patch_size / 2;
    (loc.0 * cfg.stride + half, loc.1 * cfg.stride + half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub ptype: ProjectionType,
    pub grid_dims: (usize, usize),
    pub feature_dim: usize,
    /// `H'·W'` vectors of `feature_dim` values, row-major over the grid.
    pub features: Vec<f32>,
    pub extractor_hash: String,
    pub canvas: (usize, usize),
}

impl FeatureGrid {
    pub fn len(&self) -> usize {
        self.grid_dims.0 * self.grid_dims.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature(&self, k: usize) -> &[f32] {
        &self.features[k * self.feature_dim..(k + 1) * self.feature_dim]
    }

    pub fn at(&self, i: usize, j: usize) -> &[f32] {
        self.feature(i * self.grid_dims.1 + j)
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f32> {
        self.features.chunks_exact(self.feature_dim)
    }
}

/// Produces a [`FeatureGrid`] for a projected image. Implementations must be
/// deterministic; their hash is stored in memory banks to catch mismatches.
pub trait FeatureExtractor: Send + Sync {
    fn config_hash(&self) -> String;
    fn extract(&self, img: &ProjectedImage) -> Result<FeatureGrid>;
}

#[derive(Debug, Clone, Default)]
pub struct FilterBankExtractor {
    cfg: ExtractorConfig,
    kernels: Vec<Kernel>,
    hash: String,
}

impl FilterBankExtractor {
    pub fn new(cfg: ExtractorConfig) -> Result<Self> {
        cfg.validate()?;
        let kernels = cfg.filter_bank.iter().map(|f| f.kernel()).collect();
        let hash = cfg.hash();
        Ok(FilterBankExtractor { cfg, kernels, hash })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    pub fn extract_grid(&self, img: &Grid2<f32>, ptype: ProjectionType) -> Result<FeatureGrid> {
        let cfg = &self.cfg;
        let p = cfg.patch_size;
        for &s in &cfg.scales {
            if img.h / s < p || img.w / s < p {
                return Err(Error::ImageTooSmall(format!(
                    "{}x{} image at scale {s} is smaller than patch {p}",
                    img.h, img.w
                )));
            }
        }
        let (gh, gw) = cfg.grid_dims((img.h, img.w));
        let d = cfg.feature_dim();
        let pw = p + 2 * PAD;
        let mut features = Vec::with_capacity(gh * gw * d);
        let block_means: Vec<Grid2<f64>> = cfg
            .scales
            .iter()
            .map(|&s| {
                let ext = |g: usize| (g - 1) * cfg.stride + (p - 1) * s + 1;
                block_means(img, s, ext(gh), ext(gw))
            })
            .collect();
        let taps: Vec<Vec<(usize, f64)>> = self
            .kernels
            .iter()
            .map(|k| {
                k.iter()
                    .map(|&(dr, dc, w)| (((PAD as isize + dr) * pw as isize + PAD as isize + dc) as usize, w))
                    .collect()
            })
            .collect();
        let border: Vec<usize> = (0..pw).map(|t| reflect(t as isize - PAD as isize, p)).collect();
        let mut padded = vec![0f64; pw * pw];
        let mut resp = vec![0f64; p * p];
        for i in 0..gh {
            for j in 0..gw {
                for (&s, means) in cfg.scales.iter().zip(&block_means) {
                    let (r0, c0) = (i * cfg.stride, j * cfg.stride);
                    for (a, &u) in border.iter().enumerate() {
                        for (b, &v) in border.iter().enumerate() {
                            padded[a * pw + b] = means.get(r0 + u * s, c0 + v * s);
                        }
                    }
                    for k in &taps {
                        for u in 0..p {
                            for v in 0..p {
                                let base = u * pw + v;
                                let mut acc = 0.0;
                                for &(off, w) in k {
                                    acc += w * padded[base + off];
                                }
                                resp[u * p + v] = acc;
                            }
                        }
                        let (mean, std) = mean_std(&resp);
                        for stat in &cfg.stats {
                            features.push(match stat {
                                Stat::Mean => mean as f32,
                                Stat::Std => std as f32,
                            });
                        }
                    }
                }
            }
        }
        Ok(FeatureGrid {
            ptype,
            grid_dims: (gh, gw),
            feature_dim: d,
            features,
            extractor_hash: self.hash.clone(),
            canvas: (img.h, img.w),
        })
    }
}

impl FeatureExtractor for FilterBankExtractor {
    fn config_hash(&self) -> String {
        self.hash.clone()
    }

    fn extract(&self, img: &ProjectedImage) -> Result<FeatureGrid> {
        self.extract_grid(&img.pixels, img.ptype)
    }
}

/// Mean of the `s×s` block anchored at every position of an `h×w` region,
/// reading the image with reflection beyond its border.
fn block_means(img: &Grid2<f32>, s: usize, h: usize, w: usize) -> Grid2<f64> {
    let inv = 1.0 / (s * s) as f64;
    let rows: Vec<usize> = (0..h + s).map(|r| reflect(r as isize, img.h)).collect();
    let cols: Vec<usize> = (0..w + s).map(|c| reflect(c as isize, img.w)).collect();
    let mut out = Grid2::filled(h, w, 0f64);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for &rr in &rows[r..r + s] {
                for &cc in &cols[c..c + s] {
                    acc += img.get(rr, cc) as f64;
                }
            }
            out.set(r, c, acc * inv);
        }
    }
    out
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PT: ProjectionType = ProjectionType::ALL[0];

    fn extractor(scales: Vec<usize>) -> FilterBankExtractor {
        FilterBankExtractor::new(ExtractorConfig {
            scales,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn default_dim_and_grid() {
        let cfg = ExtractorConfig::default();
        assert_eq!(cfg.feature_dim(), 20);
        assert_eq!(cfg.grid_dims((256, 256)), (62, 62));
        assert_ne!(cfg.hash(), ExtractorConfig { stride: 3, ..cfg.clone() }.hash());
    }

    #[test]
    fn config_validation() {
        let bad = |c: ExtractorConfig| FilterBankExtractor::new(c).is_err();
        assert!(bad(ExtractorConfig { patch_size: 8, ..Default::default() }));
        assert!(bad(ExtractorConfig { stride: 0, ..Default::default() }));
        assert!(bad(ExtractorConfig { scales: vec![], ..Default::default() }));
    }

    #[test]
    fn constant_image_features() {
        let c = 0.37f32;
        let img = Grid2::filled(40, 40, c);
        let g = extractor(vec![1, 2]).extract_grid(&img, PT).unwrap();
        for f in g.iter() {
            for scale in 0..2 {
                let o = scale * 10;
                assert!((f[o] - c).abs() < 1e-6); // identity mean
                assert!((f[o + 2] - c).abs() < 1e-6); // gaussian mean
                for k in [1, 3, 4, 5, 6, 7, 8, 9] {
                    assert!(f[o + k].abs() < 1e-6, "feature {} = {}", o + k, f[o + k]);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let img = Grid2::from_vec(30, 30, (0..900).map(|i| ((i * 37) % 101) as f32 / 101.0).collect());
        let e = extractor(vec![1, 2]);
        assert_eq!(e.extract_grid(&img, PT).unwrap(), e.extract_grid(&img, PT).unwrap());
    }

    #[test]
    fn too_small_image() {
        let img = Grid2::filled(8, 20, 0.0f32);
        assert!(matches!(
            extractor(vec![1]).extract_grid(&img, PT),
            Err(Error::ImageTooSmall(_))
        ));
        let img = Grid2::filled(12, 12, 0.0f32);
        assert!(extractor(vec![1, 2]).extract_grid(&img, PT).is_err());
    }

    /// Straight-line per-pixel computation on one 9×9 patch.
    fn oracle_patch(patch: &[[f64; 9]; 9]) -> Vec<f32> {
        fn mirror(i: i32) -> usize {
            let i = i.abs();
            (if i > 8 { 16 - i } else { i }) as usize
        }
        let mut gauss = [[0.0; 5]; 5];
        let mut total = 0.0;
        for (a, row) in gauss.iter_mut().enumerate() {
            for (b, g) in row.iter_mut().enumerate() {
                let (y, x) = (a as f64 - 2.0, b as f64 - 2.0);
                *g = (-(y * y + x * x) / 2.0).exp();
                total += *g;
            }
        }
        let kernels: Vec<Vec<Vec<f64>>> = vec![
            vec![vec![1.0]],
            gauss.iter().map(|r| r.iter().map(|g| g / total).collect()).collect(),
            vec![vec![-1.0, 0.0, 1.0], vec![-2.0, 0.0, 2.0], vec![-1.0, 0.0, 1.0]],
            vec![vec![-1.0, -2.0, -1.0], vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 1.0]],
            vec![vec![0.0, 1.0, 0.0], vec![1.0, -4.0, 1.0], vec![0.0, 1.0, 0.0]],
        ];
        let mut out = Vec::new();
        for k in &kernels {
            let r = (k.len() / 2) as i32;
            let mut vals = Vec::new();
            for y in 0..9i32 {
                for x in 0..9i32 {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            acc += k[(dy + r) as usize][(dx + r) as usize]
                                * patch[mirror(y + dy)][mirror(x + dx)];
                        }
                    }
                    vals.push(acc);
                }
            }
            let mean = vals.iter().sum::<f64>() / 81.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 81.0;
            out.push(mean as f32);
            out.push(var.sqrt() as f32);
        }
        out
    }

    fn close(a: &[f32], b: &[f32]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-5 * (1.0 + y.abs()))
    }

    #[test]
    fn single_patch_matches_oracle() {
        let img = Grid2::from_vec(9, 9, (0..81).map(|i| ((i * 29 + 7) % 31) as f32 / 31.0).collect());
        let g = extractor(vec![1]).extract_grid(&img, PT).unwrap();
        assert_eq!(g.grid_dims, (1, 1));
        let mut patch = [[0.0; 9]; 9];
        for (y, row) in patch.iter_mut().enumerate() {
            for (x, p) in row.iter_mut().enumerate() {
                *p = img.get(y, x) as f64;
            }
        }
        assert!(close(g.at(0, 0), &oracle_patch(&patch)));
    }

    #[test]
    fn coarse_scale_matches_oracle() {
        let img = Grid2::from_vec(18, 18, (0..324).map(|i| ((i * 17 + 3) % 23) as f32 / 23.0).collect());
        let g = extractor(vec![1, 2]).extract_grid(&img, PT).unwrap();
        assert_eq!(g.grid_dims, (3, 3));
        let mut patch = [[0.0; 9]; 9];
        for (y, row) in patch.iter_mut().enumerate() {
            for (x, p) in row.iter_mut().enumerate() {
                *p = (img.get(2 * y, 2 * x) + img.get(2 * y, 2 * x + 1) + img.get(2 * y + 1, 2 * x)
                    + img.get(2 * y + 1, 2 * x + 1)) as f64
                    / 4.0;
            }
        }
        assert!(close(&g.at(0, 0)[10..], &oracle_patch(&patch)));
    }

    #[test]
    fn stride_translation_shifts_grid() {
        let mut a = Grid2::filled(48, 48, 0.0f32);
        a.set(20, 22, 1.0);
        let mut b = Grid2::filled(48, 48, 0.0f32);
        b.set(24, 26, 1.0);
        let e = extractor(vec![1, 2]);
        let (ga, gb) = (e.extract_grid(&a, PT).unwrap(), e.extract_grid(&b, PT).unwrap());
        for i in 1..ga.grid_dims.0 - 2 {
            for j in 1..ga.grid_dims.1 - 2 {
                assert_eq!(ga.at(i, j), gb.at(i + 1, j + 1), "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn footprints() {
        let cfg = ExtractorConfig::default();
        let r = grid_to_pixel((0, 0), &cfg, (256, 256)).unwrap();
        assert_eq!(r, PixelRect { r0: 0, c0: 0, r1: 8, c1: 8 });
        let a = grid_to_pixel((0, 1), &cfg, (256, 256)).unwrap();
        assert_eq!(r.c1 + 1 - a.c0, 5);
        let last = grid_to_pixel((61, 61), &cfg, (256, 256)).unwrap();
        assert!(last.r1 < 256 && last.c1 < 256);
        assert!(grid_to_pixel((62, 0), &cfg, (256, 256)).is_err());
        assert_eq!(cell_center((1, 2), &cfg), (8, 12));
    }
}
