//! From 2D anomaly maps back to a 3D anomaly volume.
//!
//! Each map is masked and percentile-min-max normalized on the canvas,
//! mapped back onto the collapsed plane of its source volume, replicated
//! along the collapsed axis and normalized again over its lung. Per-lung
//! volumes are summed, and the two lungs are normalized jointly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::memory_bank::AnomalyMap2D;
use crate::percentile::nearest_rank;
use crate::projection::{CanvasMapping, ProjectedMask, ProjectionType, Side};
use crate::segmentation::LungPair;
use crate::volume::{voxel_count, Dims, Spacing, Volume};

pub const DEFAULT_Q: f64 = 50.0;
pub const DEFAULT_LOCALIZATION_PCT: f64 = 99.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub q: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig { q: DEFAULT_Q }
    }
}

impl NormConfig {
    pub fn new(q: f64) -> Result<Self> {
        if !(0.0..100.0).contains(&q) {
            return Err(Error::Config(format!("q must be in [0,100), got {q}")));
        }
        Ok(NormConfig { q })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "stage", content = "of")]
pub enum Stage {
    Projection(ProjectionType),
    Lung(Side),
    Final,
}

/// Float volume in CT voxel space.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyVolume {
    pub dims: Dims,
    pub spacing_mm: Spacing,
    pub data: Vec<f32>,
    pub stage: Stage,
}

impl AnomalyVolume {
    /// Index and value of the largest voxel (lowest index on ties).
    pub fn argmax(&self) -> (usize, f32) {
        let mut best = (0, f32::NEG_INFINITY);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }

    pub fn argmax_zyx(&self) -> ([usize; 3], f32) {
        let (i, v) = self.argmax();
        let [_, y, x] = self.dims;
        ([i / (y * x), (i / x) % y, i % x], v)
    }

    /// Float32 volume; values must already lie in `[0, 1]`.
    pub fn to_volume(&self) -> Result<Volume> {
        Volume::from_f32(self.dims, self.spacing_mm, self.data.clone())
    }
}

/// Percentile min-max normalization over a region: values are shifted by
/// the nearest-rank `q`-th percentile, divided by `max − p_q` and clamped to
/// `[0, 1]`; everything outside the region is 0, as is a constant region.
pub fn percentile_minmax(values: &[f32], region: &[bool], q: f64) -> Result<Vec<f32>> {
    if values.len() != region.len() {
        return Err(Error::DimMismatch(format!(
            "{} values vs {} region flags",
            values.len(),
            region.len()
        )));
    }
    let inside: Vec<f64> = values
        .iter()
        .zip(region)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyRegion("normalization region is empty".into()));
    }
    let max = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pq = nearest_rank(inside, q);
    let span = max - pq;
    Ok(values
        .iter()
        .zip(region)
        .map(|(&v, &m)| {
            if !m || span <= 0.0 {
                0.0
            } else {
                ((v as f64 - pq) / span).clamp(0.0, 1.0) as f32
            }
        })
        .collect())
}

/// Masks a canvas anomaly map and normalizes it over the mask.
pub fn mask_normalize_2d(map: &AnomalyMap2D, mask: &ProjectedMask, cfg: NormConfig) -> Result<Grid2<f32>> {
    if map.ptype != mask.ptype {
        return Err(Error::ProjectionMismatch(format!(
            "map {} with mask {}",
            map.ptype, mask.ptype
        )));
    }
    if (map.pixels.h, map.pixels.w) != (mask.pixels.h, mask.pixels.w) {
        return Err(Error::DimMismatch("map and mask canvases differ".into()));
    }
    let masked: Vec<f32> = map
        .pixels
        .data
        .iter()
        .zip(&mask.pixels.data)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    let out = percentile_minmax(&masked, &mask.pixels.data, cfg.q)?;
    Ok(Grid2::from_vec(map.pixels.h, map.pixels.w, out))
}

/// What reverse projection needs to know about a forward projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSidecar {
    pub ptype: ProjectionType,
    pub volume_dims: Dims,
    pub spacing_mm: Spacing,
    pub mapping: CanvasMapping,
}

impl ProjectionSidecar {
    pub fn validate(&self) -> Result<()> {
        let plane = self.ptype.plane.plane_dims(self.volume_dims);
        let m = &self.mapping;
        if m.plane_dims != plane
            || m.rows == 0
            || m.cols == 0
            || m.row0 + m.rows > plane.0
            || m.col0 + m.cols > plane.1
            || m.resized.0 > m.canvas.0
            || m.resized.1 > m.canvas.1
        {
            return Err(Error::Sidecar(format!(
                "{} mapping {:?} does not fit volume {:?}",
                self.ptype, m, self.volume_dims
            )));
        }
        Ok(())
    }
}

/// Canvas map resampled onto the collapsed plane of the source volume;
/// plane pixels outside the crop window are 0.
pub fn canvas_to_plane(r: &Grid2<f32>, sidecar: &ProjectionSidecar) -> Result<Grid2<f32>> {
    sidecar.validate()?;
    let m = &sidecar.mapping;
    if (r.h, r.w) != m.canvas {
        return Err(Error::Sidecar(format!(
            "map is {}x{}, sidecar canvas {:?}",
            r.h, r.w, m.canvas
        )));
    }
    let (ph, pw) = m.plane_dims;
    let mut plane = Grid2::filled(ph, pw, 0f32);
    for a in 0..ph {
        for b in 0..pw {
            if let Some((cr, cc)) = m.plane_to_canvas(a, b) {
                plane.set(a, b, r.sample_bilinear(cr, cc));
            }
        }
    }
    Ok(plane)
}

/// Copies a plane map along the collapsed axis across the whole volume.
pub fn replicate_plane(plane: &Grid2<f32>, ptype: ProjectionType, dims: Dims) -> Result<Vec<f32>> {
    let (ph, pw) = ptype.plane.plane_dims(dims);
    if (plane.h, plane.w) != (ph, pw) {
        return Err(Error::DimMismatch(format!(
            "plane {}x{} vs expected {ph}x{pw}",
            plane.h, plane.w
        )));
    }
    let (ka, kb) = ptype.plane.kept_axes();
    let mut out = Vec::with_capacity(voxel_count(dims));
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let idx = [z, y, x];
                out.push(plane.get(idx[ka], idx[kb]));
            }
        }
    }
    Ok(out)
}

/// Reverse projection followed by 3D normalization over the side's lung.
pub fn reverse_project(
    r: &Grid2<f32>,
    sidecar: &ProjectionSidecar,
    lung: &Volume,
    cfg: NormConfig,
) -> Result<AnomalyVolume> {
    if lung.dims() != sidecar.volume_dims {
        return Err(Error::Sidecar(format!(
            "sidecar dims {:?} vs lung mask {:?}",
            sidecar.volume_dims,
            lung.dims()
        )));
    }
    let plane = canvas_to_plane(r, sidecar)?;
    let raw = replicate_plane(&plane, sidecar.ptype, sidecar.volume_dims)?;
    let data = percentile_minmax(&raw, &lung.foreground()?, cfg.q)?;
    Ok(AnomalyVolume {
        dims: sidecar.volume_dims,
        spacing_mm: sidecar.spacing_mm,
        data,
        stage: Stage::Projection(sidecar.ptype),
    })
}

/// Sum of one lung's reverse-projected volumes, masked to that lung.
/// Values lie in `[0, n]` for `n` inputs.
pub fn fuse_per_lung(parts: &[&AnomalyVolume], lung: &Volume, side: Side) -> Result<AnomalyVolume> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("no volumes to fuse".into()))?;
    for p in parts {
        if p.dims != lung.dims() {
            return Err(Error::DimMismatch(format!(
                "volume {:?} vs lung mask {:?}",
                p.dims,
                lung.dims()
            )));
        }
    }
    let mask = lung.foreground()?;
    let data = (0..mask.len())
        .map(|i| {
            if mask[i] {
                parts.iter().map(|p| p.data[i]).sum()
            } else {
                0.0
            }
        })
        .collect();
    Ok(AnomalyVolume {
        dims: first.dims,
        spacing_mm: first.spacing_mm,
        data,
        stage: Stage::Lung(side),
    })
}

/// Joint normalization of both lungs' volumes over the union lung region.
pub fn fuse_final(u_r: &AnomalyVolume, u_l: &AnomalyVolume, lungs: &LungPair, cfg: NormConfig) -> Result<AnomalyVolume> {
    if u_r.dims != u_l.dims || u_r.dims != lungs.dims() {
        return Err(Error::DimMismatch(format!(
            "right {:?}, left {:?}, lungs {:?}",
            u_r.dims,
            u_l.dims,
            lungs.dims()
        )));
    }
    if u_r.data.iter().zip(&u_l.data).any(|(&a, &b)| a != 0.0 && b != 0.0) {
        return Err(Error::InvalidArgument("lung volumes have overlapping support".into()));
    }
    let right = lungs.right.foreground()?;
    let left = lungs.left.foreground()?;
    let region: Vec<bool> = right.iter().zip(&left).map(|(&a, &b)| a || b).collect();
    let sum: Vec<f32> = u_r.data.iter().zip(&u_l.data).map(|(a, b)| a + b).collect();
    let data = percentile_minmax(&sum, &region, cfg.q)?;
    Ok(AnomalyVolume {
        dims: u_r.dims,
        spacing_mm: u_r.spacing_mm,
        data,
        stage: Stage::Final,
    })
}

/// Marks in-region voxels at or above the nearest-rank `pct` percentile of
/// in-region values.
pub fn binarize_top(v: &AnomalyVolume, region: &[bool], pct: f64) -> Result<Volume> {
    if region.len() != v.data.len() {
        return Err(Error::DimMismatch("region and volume sizes differ".into()));
    }
    let inside: Vec<f64> = v
        .data
        .iter()
        .zip(region)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x as f64)
        .collect();
    if inside.is_empty() {
        return Volume::from_u8(v.dims, v.spacing_mm, vec![0; v.data.len()]);
    }
    let thr = nearest_rank(inside, pct);
    let out = v
        .data
        .iter()
        .zip(region)
        .map(|(&x, &m)| u8::from(m && x as f64 >= thr))
        .collect();
    Volume::from_u8(v.dims, v.spacing_mm, out)
}

/// True iff the prediction and the ground truth share a voxel.
pub fn localization_hit(pred: &Volume, gt: &Volume) -> Result<bool> {
    pred.same_dims(gt)?;
    let (p, g) = (pred.foreground()?, gt.foreground()?);
    Ok(p.iter().zip(&g).any(|(&a, &b)| a && b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::Plane;
    use proptest::prelude::*;

    fn av(dims: Dims, data: Vec<f32>) -> AnomalyVolume {
        AnomalyVolume {
            dims,
            spacing_mm: [1.0; 3],
            data,
            stage: Stage::Final,
        }
    }

    #[test]
    fn minmax_examples() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        let all = [true; 5];
        assert_eq!(percentile_minmax(&v, &all, 50.0).unwrap(), vec![0.0, 0.0, 0.0, 0.5, 1.0]);
        assert_eq!(percentile_minmax(&v, &all, 0.0).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(percentile_minmax(&[3.0; 4], &[true; 4], 50.0).unwrap(), vec![0.0; 4]);
        let out = percentile_minmax(&[9.0, 0.0, 1.0], &[false, true, true], 0.0).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 1.0]);
        assert!(matches!(
            percentile_minmax(&[1.0], &[false], 50.0),
            Err(Error::EmptyRegion(_))
        ));
    }

    proptest! {
        #[test]
        fn minmax_preserves_order(v in proptest::collection::vec(0.0f32..10.0, 1..100), q in 0.0f64..99.9) {
            let region = vec![true; v.len()];
            let out = percentile_minmax(&v, &region, q).unwrap();
            for i in 0..v.len() {
                prop_assert!((0.0..=1.0).contains(&out[i]));
                for j in 0..v.len() {
                    if v[i] <= v[j] {
                        prop_assert!(out[i] <= out[j]);
                    }
                }
            }
        }

        #[test]
        fn replication_is_axis_constant(
            plane_kind in 0usize..3,
            seed in proptest::collection::vec(0.0f32..1.0, 4 * 5 * 6),
        ) {
            let dims = [4, 5, 6];
            let plane = Plane::ALL[plane_kind];
            let (h, w) = plane.plane_dims(dims);
            let g = Grid2::from_vec(h, w, seed[..h * w].to_vec());
            let pt = ProjectionType { side: Side::Right, plane };
            let vol = replicate_plane(&g, pt, dims).unwrap();
            let axis = plane.collapsed_axis();
            for z in 0..4 { for y in 0..5 { for x in 0..6 {
                let mut idx = [z, y, x];
                let v = vol[(z * 5 + y) * 6 + x];
                idx[axis] = 0;
                prop_assert_eq!(v, vol[(idx[0] * 5 + idx[1]) * 6 + idx[2]]);
            }}}
        }
    }

    #[test]
    fn hot_pixel_becomes_hot_line() {
        let dims = [4, 5, 6];
        let pt = ProjectionType { side: Side::Left, plane: Plane::Coronal };
        let mut g = Grid2::filled(4, 6, 0f32);
        g.set(2, 3, 1.0);
        let vol = replicate_plane(&g, pt, dims).unwrap();
        for z in 0..4 {
            for y in 0..5 {
                for x in 0..6 {
                    let hot = z == 2 && x == 3;
                    assert_eq!(vol[(z * 5 + y) * 6 + x], if hot { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn identity_mapping_round_trips_plane() {
        let dims = [3, 8, 8];
        let pt = ProjectionType { side: Side::Right, plane: Plane::Axial };
        let sidecar = ProjectionSidecar {
            ptype: pt,
            volume_dims: dims,
            spacing_mm: [1.0; 3],
            mapping: CanvasMapping {
                plane_dims: (8, 8),
                row0: 0,
                col0: 0,
                rows: 8,
                cols: 8,
                scale: 1.0,
                resized: (8, 8),
                canvas: (8, 8),
            },
        };
        let r = Grid2::from_vec(8, 8, (0..64).map(|i| i as f32 / 64.0).collect());
        assert_eq!(canvas_to_plane(&r, &sidecar).unwrap(), r);
        let mut bad = sidecar.clone();
        bad.volume_dims = [3, 9, 8];
        assert!(matches!(canvas_to_plane(&r, &bad), Err(Error::Sidecar(_))));
    }

    #[test]
    fn per_lung_fusion() {
        let dims = [1, 1, 4];
        let lung = Volume::from_u8(dims, [1.0; 3], vec![1, 1, 0, 0]).unwrap();
        let w = av(dims, vec![0.2, 0.5, 0.7, 0.1]);
        let f = fuse_per_lung(&[&w, &w, &w], &lung, Side::Right).unwrap();
        let three = |x: f32| x + x + x;
        assert_eq!(f.data, vec![three(0.2), three(0.5), 0.0, 0.0]);
        let z = av(dims, vec![0.0; 4]);
        assert!(fuse_per_lung(&[&z, &z, &z], &lung, Side::Right).unwrap().data.iter().all(|&v| v == 0.0));
    }

    fn pair(dims: Dims, right: Vec<u8>, left: Vec<u8>) -> LungPair {
        LungPair::new(
            Volume::from_u8(dims, [1.0; 3], right).unwrap(),
            Volume::from_u8(dims, [1.0; 3], left).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn final_fusion() {
        let dims = [1, 1, 6];
        let lungs = pair(dims, vec![1, 1, 1, 0, 0, 0], vec![0, 0, 0, 1, 1, 0]);
        let ur = av(dims, vec![0.3, 0.9, 0.6, 0.0, 0.0, 0.0]);
        let ul = av(dims, vec![0.0; 6]);
        let v = fuse_final(&ur, &ul, &lungs, NormConfig::new(0.0).unwrap()).unwrap();
        // union values [0.3, 0.9, 0.6, 0, 0], min 0, max 0.9
        let oracle = [0.3 / 0.9, 1.0, 0.6 / 0.9, 0.0, 0.0, 0.0];
        for (a, b) in v.data.iter().zip(oracle) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
        assert_eq!(v.argmax(), (1, 1.0));
        let overlap = av(dims, vec![0.0, 0.1, 0.0, 0.0, 0.0, 0.0]);
        assert!(fuse_final(&ur, &overlap, &lungs, NormConfig::default()).is_err());
    }

    #[test]
    fn binarize_rank_arithmetic() {
        let dims = [10, 10, 10];
        let v = av(dims, (0..1000).map(|i| i as f32 / 999.0).collect());
        let region = vec![true; 1000];
        let count = |pct| {
            binarize_top(&v, &region, pct).unwrap().as_u8().unwrap().iter().filter(|&&b| b == 1).count()
        };
        assert_eq!(count(99.5), 6);
        assert_eq!(count(0.0), 1000);
        let mut prev = usize::MAX;
        for pct in [0.0, 10.0, 50.0, 90.0, 99.0, 99.5, 99.9, 100.0] {
            let c = count(pct);
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn hits() {
        let dims = [1, 1, 3];
        let a = Volume::from_u8(dims, [1.0; 3], vec![1, 1, 0]).unwrap();
        let b = Volume::from_u8(dims, [1.0; 3], vec![0, 1, 1]).unwrap();
        let c = Volume::from_u8(dims, [1.0; 3], vec![0, 0, 1]).unwrap();
        assert!(localization_hit(&a, &a).unwrap());
        assert!(localization_hit(&a, &b).unwrap());
        assert!(!localization_hit(&a, &c).unwrap());
    }
}
