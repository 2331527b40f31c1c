//! Dense 3D scalar grids with voxel spacing.
//!
//! Voxels are stored row-major in z→y→x order, with `z` the axial slice index.
//! A [`Volume`] holds one of three element types: Hounsfield units (`i16`),
//! unit-interval intensities (`f32` in `[0, 1]`), or lung labels (`u8` in
//! `{0, 1, 2}`; binary masks use only `{0, 1}`). The element-type invariants
//! are checked at construction, so every `Volume` in circulation is valid.

use crate::error::{Error, Result};

/// Grid extent as `[Z, Y, X]`.
pub type Dims = [usize; 3];

/// Voxel spacing in millimetres as `[sz, sy, sx]`.
pub type Spacing = [f64; 3];

/// Default truncation window in HU.
pub const HU_LO: i16 = -800;
pub const HU_HI: i16 = 0;

/// Hounsfield value assigned to voxels outside the region of interest.
pub const AIR_HU: i16 = -1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    I16,
    F32,
    U8,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::I16 => "i16",
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "i16" => Ok(Dtype::I16),
            "f32" => Ok(Dtype::F32),
            "u8" => Ok(Dtype::U8),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            Dtype::I16 => 2,
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Voxels {
    I16(Vec<i16>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Voxels {
    pub fn len(&self) -> usize {
        match self {
            Voxels::I16(v) => v.len(),
            Voxels::F32(v) => v.len(),
            Voxels::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Voxels::I16(_) => Dtype::I16,
            Voxels::F32(_) => Dtype::F32,
            Voxels::U8(_) => Dtype::U8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing_mm: Spacing,
    voxels: Voxels,
}

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Dims, z: usize, y: usize, x: usize) -> usize {
    (z * dims[1] + y) * dims[2] + x
}

fn check_geometry(dims: Dims, spacing: Spacing, len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidVolume(format!("dims must be >= 1, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidVolume(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    if voxel_count(dims) != len {
        return Err(Error::InvalidVolume(format!(
            "voxel count {len} does not match dims {dims:?}"
        )));
    }
    Ok(())
}

impl Volume {
    pub fn new(dims: Dims, spacing_mm: Spacing, voxels: Voxels) -> Result<Self> {
        check_geometry(dims, spacing_mm, voxels.len())?;
        match &voxels {
            Voxels::I16(_) => {}
            Voxels::F32(v) => {
                if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                    return Err(Error::InvalidVolume(format!(
                        "f32 voxel {bad} outside [0, 1]"
                    )));
                }
            }
            Voxels::U8(v) => {
                if let Some(bad) = v.iter().find(|&&x| x > 2) {
                    return Err(Error::InvalidVolume(format!("label voxel {bad} not in {{0,1,2}}")));
                }
            }
        }
        Ok(Volume {
            dims,
            spacing_mm,
            voxels,
        })
    }

    pub fn from_i16(dims: Dims, spacing_mm: Spacing, data: Vec<i16>) -> Result<Self> {
        Self::new(dims, spacing_mm, Voxels::I16(data))
    }

    pub fn from_f32(dims: Dims, spacing_mm: Spacing, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, spacing_mm, Voxels::F32(data))
    }

    pub fn from_u8(dims: Dims, spacing_mm: Spacing, data: Vec<u8>) -> Result<Self> {
        Self::new(dims, spacing_mm, Voxels::U8(data))
    }

    /// Binary mask from a predicate slice.
    pub fn from_mask(dims: Dims, spacing_mm: Spacing, mask: &[bool]) -> Result<Self> {
        Self::from_u8(dims, spacing_mm, mask.iter().map(|&b| b as u8).collect())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing_mm
    }

    pub fn dtype(&self) -> Dtype {
        self.voxels.dtype()
    }

    pub fn voxels(&self) -> &Voxels {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn into_voxels(self) -> Voxels {
        self.voxels
    }

    pub fn as_i16(&self) -> Result<&[i16]> {
        match &self.voxels {
            Voxels::I16(v) => Ok(v),
            other => Err(wrong_dtype(Dtype::I16, other.dtype())),
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.voxels {
            Voxels::F32(v) => Ok(v),
            other => Err(wrong_dtype(Dtype::F32, other.dtype())),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.voxels {
            Voxels::U8(v) => Ok(v),
            other => Err(wrong_dtype(Dtype::U8, other.dtype())),
        }
    }

    /// Nonzero voxels of a label volume as a boolean mask.
    pub fn foreground(&self) -> Result<Vec<bool>> {
        Ok(self.as_u8()?.iter().map(|&v| v != 0).collect())
    }

    pub fn is_binary(&self) -> bool {
        matches!(&self.voxels, Voxels::U8(v) if v.iter().all(|&x| x <= 1))
    }

    pub fn same_dims(&self, other: &Volume) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

fn wrong_dtype(want: Dtype, got: Dtype) -> Error {
    Error::InvalidArgument(format!(
        "expected {} volume, got {}",
        want.as_str(),
        got.as_str()
    ))
}

fn check_window(lo: i16, hi: i16) -> Result<()> {
    if lo >= hi {
        return Err(Error::InvalidArgument(format!(
            "HU window requires lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Clamps every voxel of an HU volume into `[lo, hi]`.
pub fn truncate_hu(v: &Volume, lo: i16, hi: i16) -> Result<Volume> {
    check_window(lo, hi)?;
    let data = v.as_i16()?.iter().map(|&x| x.clamp(lo, hi)).collect();
    Volume::from_i16(v.dims, v.spacing_mm, data)
}

/// Maps an already-truncated HU volume linearly onto `[0, 1]` with fixed
/// bounds: `(v - lo) / (hi - lo)`.
pub fn normalize_truncated(v: &Volume, lo: i16, hi: i16) -> Result<Volume> {
    check_window(lo, hi)?;
    let src = v.as_i16()?;
    if let Some(bad) = src.iter().find(|&&x| x < lo || x > hi) {
        return Err(Error::InvalidArgument(format!(
            "voxel {bad} HU outside truncation window [{lo}, {hi}]"
        )));
    }
    let data = src.iter().map(|&x| normalize_hu(x, lo, hi)).collect();
    Volume::from_f32(v.dims, v.spacing_mm, data)
}

#[inline]
pub(crate) fn normalize_hu(x: i16, lo: i16, hi: i16) -> f32 {
    let span = f32::from(hi) - f32::from(lo);
    ((f32::from(x) - f32::from(lo)) / span).clamp(0.0, 1.0)
}

/// Nearest-neighbour resampling onto a new voxel spacing.
///
/// Output extent per axis is `round(n * old / new)`, at least 1. Output voxel
/// `i` reads source voxel `floor((i + 0.5) * new / old)`.
pub fn resample_nearest(v: &Volume, target_spacing_mm: Spacing) -> Result<Volume> {
    if target_spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be positive, got {target_spacing_mm:?}"
        )));
    }
    let old = v.dims;
    let mut new_dims = [0usize; 3];
    let mut maps: [Vec<usize>; 3] = Default::default();
    for a in 0..3 {
        let ratio = v.spacing_mm[a] / target_spacing_mm[a];
        new_dims[a] = ((old[a] as f64 * ratio).round() as usize).max(1);
        maps[a] = (0..new_dims[a])
            .map(|i| {
                let src = ((i as f64 + 0.5) / ratio).floor() as usize;
                src.min(old[a] - 1)
            })
            .collect();
    }
    fn gather<T: Copy>(src: &[T], old: Dims, new: Dims, maps: &[Vec<usize>; 3]) -> Vec<T> {
        let mut out = Vec::with_capacity(voxel_count(new));
        for &z in &maps[0] {
            for &y in &maps[1] {
                let row = linear_index(old, z, y, 0);
                out.extend(maps[2].iter().map(|&x| src[row + x]));
            }
        }
        out
    }
    let voxels = match &v.voxels {
        Voxels::I16(d) => Voxels::I16(gather(d, old, new_dims, &maps)),
        Voxels::F32(d) => Voxels::F32(gather(d, old, new_dims, &maps)),
        Voxels::U8(d) => Voxels::U8(gather(d, old, new_dims, &maps)),
    };
    Volume::new(new_dims, target_spacing_mm, voxels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hu(data: Vec<i16>) -> Volume {
        let n = data.len();
        Volume::from_i16([1, 1, n], [1.0; 3], data).unwrap()
    }

    #[test]
    fn truncation_window() {
        let v = truncate_hu(&hu(vec![-1000, -400, 50]), HU_LO, HU_HI).unwrap();
        assert_eq!(v.as_i16().unwrap(), &[-800, -400, 0]);
        assert!(truncate_hu(&v, 0, 0).is_err());
        assert!(truncate_hu(&v, 10, -10).is_err());
    }

    #[test]
    fn normalization_endpoints() {
        let v = normalize_truncated(&hu(vec![-800, 0, -400]), HU_LO, HU_HI).unwrap();
        assert_eq!(v.as_f32().unwrap(), &[0.0, 1.0, 0.5]);
        assert!(normalize_truncated(&hu(vec![-900]), HU_LO, HU_HI).is_err());
    }

    #[test]
    fn invariants_checked() {
        assert!(Volume::from_f32([1, 1, 2], [1.0; 3], vec![0.5, 1.5]).is_err());
        assert!(Volume::from_u8([1, 1, 2], [1.0; 3], vec![0, 3]).is_err());
        assert!(Volume::from_u8([0, 1, 1], [1.0; 3], vec![]).is_err());
        assert!(Volume::from_i16([1, 2, 2], [1.0; 3], vec![0; 3]).is_err());
        assert!(Volume::from_i16([1, 1, 1], [0.0, 1.0, 1.0], vec![0]).is_err());
    }

    #[test]
    fn resample_upsamples_by_replication() {
        let data: Vec<i16> = (0..4).collect();
        let v = Volume::from_i16([4, 1, 1], [2.0, 1.0, 1.0], data).unwrap();
        let r = resample_nearest(&v, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.dims(), [8, 1, 1]);
        assert_eq!(r.as_i16().unwrap(), &[0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn resample_identity_and_constant() {
        let data: Vec<u8> = (0..24).map(|i| (i % 3) as u8).collect();
        let v = Volume::from_u8([2, 3, 4], [1.5, 0.7, 0.7], data).unwrap();
        assert_eq!(resample_nearest(&v, v.spacing()).unwrap(), v);

        let c = Volume::from_i16([3, 5, 5], [2.5, 1.0, 1.0], vec![-123; 75]).unwrap();
        let r = resample_nearest(&c, [1.0, 0.6, 2.0]).unwrap();
        assert_eq!(r.dims(), [8, 8, 3]);
        assert!(r.as_i16().unwrap().iter().all(|&x| x == -123));

        assert!(resample_nearest(&c, [1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn resample_never_collapses_to_zero() {
        let v = Volume::from_i16([1, 1, 1], [1.0; 3], vec![7]).unwrap();
        let r = resample_nearest(&v, [10.0, 10.0, 10.0]).unwrap();
        assert_eq!(r.dims(), [1, 1, 1]);
    }
}
