//! Multi-view projection of segmented lungs.
//!
//! Each lung is masked out of the CT (everything else set to air),
//! truncated to the disease-salient HU window and normalized to `[0, 1]`,
//! then collapsed along one axis by maximum (or mean) intensity. Two sides
//! times three planes give six projection types.
//!
//! Plane images keep the two non-collapsed axes in z→y→x order:
//!
//! | plane    | collapsed | rows | cols |
//! |----------|-----------|------|------|
//! | axial    | z         | y    | x    |
//! | coronal  | y         | z    | x    |
//! | sagittal | x         | z    | y    |
//!
//! Every projection is then cropped to its lung's 2D bounding box (plus a
//! small margin) and resized onto a fixed canvas. The [`CanvasMapping`]
//! records the crop window and scale so 2D maps can be carried back onto the
//! plane grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::segmentation::LungPair;
use crate::volume::{linear_index, normalize_truncated, truncate_hu, Dims, Volume, AIR_HU};

/// Pixels of margin added around the mask bounding box before resizing.
pub const BBOX_MARGIN: usize = 2;
pub const DEFAULT_CANVAS: (usize, usize) = (256, 256);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Right,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Sagittal,
    Coronal,
    Axial,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Sagittal, Plane::Coronal, Plane::Axial];

    /// Index of the volume axis (`0 = z, 1 = y, 2 = x`) the plane collapses.
    pub fn collapsed_axis(self) -> usize {
        match self {
            Plane::Axial => 0,
            Plane::Coronal => 1,
            Plane::Sagittal => 2,
        }
    }

    /// Volume axes that become (rows, cols) of the plane image.
    pub fn kept_axes(self) -> (usize, usize) {
        match self {
            Plane::Axial => (1, 2),
            Plane::Coronal => (0, 2),
            Plane::Sagittal => (0, 1),
        }
    }

    pub fn plane_dims(self, dims: Dims) -> (usize, usize) {
        let (r, c) = self.kept_axes();
        (dims[r], dims[c])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProjectionType {
    pub side: Side,
    pub plane: Plane,
}

impl ProjectionType {
    pub const fn new(side: Side, plane: Plane) -> Self {
        ProjectionType { side, plane }
    }

    /// All six types in canonical order: (r,s), (r,c), (r,a), (l,s), (l,c), (l,a).
    pub const ALL: [ProjectionType; 6] = [
        ProjectionType::new(Side::Right, Plane::Sagittal),
        ProjectionType::new(Side::Right, Plane::Coronal),
        ProjectionType::new(Side::Right, Plane::Axial),
        ProjectionType::new(Side::Left, Plane::Sagittal),
        ProjectionType::new(Side::Left, Plane::Coronal),
        ProjectionType::new(Side::Left, Plane::Axial),
    ];

    pub fn as_str(self) -> &'static str {
        match (self.side, self.plane) {
            (Side::Right, Plane::Sagittal) => "right_sagittal",
            (Side::Right, Plane::Coronal) => "right_coronal",
            (Side::Right, Plane::Axial) => "right_axial",
            (Side::Left, Plane::Sagittal) => "left_sagittal",
            (Side::Left, Plane::Coronal) => "left_coronal",
            (Side::Left, Plane::Axial) => "left_axial",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&p| p == self).expect("canonical type")
    }
}

impl fmt::Display for ProjectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProjectionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown projection type {s:?}")))
    }
}

impl Serialize for ProjectionType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ProjectionType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    #[default]
    Mip,
    Aip,
}

/// Which planes take part in a run; both sides are always projected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionSet {
    CoronalOnly,
    CoronalAxial,
    #[default]
    AllThree,
}

impl ProjectionSet {
    pub fn planes(self) -> &'static [Plane] {
        match self {
            ProjectionSet::CoronalOnly => &[Plane::Coronal],
            ProjectionSet::CoronalAxial => &[Plane::Coronal, Plane::Axial],
            ProjectionSet::AllThree => &[Plane::Sagittal, Plane::Coronal, Plane::Axial],
        }
    }

    /// Member types in canonical order.
    pub fn types(self) -> Vec<ProjectionType> {
        ProjectionType::ALL
            .into_iter()
            .filter(|p| self.planes().contains(&p.plane))
            .collect()
    }
}

/// Masks the CT to one lung (outside voxels become air), truncates to
/// `[lo, hi]` HU and normalizes to `[0, 1]`.
pub fn prepare_lung_volume(ct: &Volume, lung: &Volume, lo: i16, hi: i16) -> Result<Volume> {
    ct.same_dims(lung)?;
    let hu = ct.as_i16()?;
    let m = lung.as_u8()?;
    let masked: Vec<i16> = hu
        .iter()
        .zip(m)
        .map(|(&v, &k)| if k != 0 { v } else { AIR_HU })
        .collect();
    let masked = Volume::from_i16(ct.dims(), ct.spacing(), masked)?;
    normalize_truncated(&truncate_hu(&masked, lo, hi)?, lo, hi)
}

/// Collapses `values` along the plane's axis, folding each column with `fold`
/// and finishing with `finish(acc, column_length)`.
fn collapse<T: Copy, A: Copy>(
    values: &[T],
    dims: Dims,
    plane: Plane,
    init: A,
    fold: impl Fn(A, T) -> A,
    finish: impl Fn(A, usize) -> A,
) -> Grid2<A> {
    let axis = plane.collapsed_axis();
    let (h, w) = plane.plane_dims(dims);
    let mut acc = Grid2::filled(h, w, init);
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let (r, c) = match plane {
                    Plane::Axial => (y, x),
                    Plane::Coronal => (z, x),
                    Plane::Sagittal => (z, y),
                };
                let v = values[linear_index(dims, z, y, x)];
                let i = r * w + c;
                acc.data[i] = fold(acc.data[i], v);
            }
        }
    }
    let n = dims[axis];
    acc.data.iter_mut().for_each(|a| *a = finish(*a, n));
    acc
}

/// Maximum intensity projection.
pub fn mip_project(v: &Volume, plane: Plane) -> Result<Grid2<f32>> {
    Ok(collapse(v.as_f32()?, v.dims(), plane, f32::NEG_INFINITY, f32::max, |a, _| a))
}

/// Average intensity projection (arithmetic mean, accumulated in `f64`).
pub fn aip_project(v: &Volume, plane: Plane) -> Result<Grid2<f32>> {
    let sums = collapse(v.as_f32()?, v.dims(), plane, 0f64, |a, x| a + x as f64, |a, n| a / n as f64);
    Ok(sums.map(|s| s as f32))
}

/// Logical OR of a binary mask along the plane's axis.
pub fn project_mask(mask: &Volume, plane: Plane) -> Result<Grid2<bool>> {
    Ok(collapse(mask.as_u8()?, mask.dims(), plane, false, |a, x| a || x != 0, |a, _| a))
}

pub fn project(v: &Volume, plane: Plane, method: ProjectionMethod) -> Result<Grid2<f32>> {
    match method {
        ProjectionMethod::Mip => mip_project(v, plane),
        ProjectionMethod::Aip => aip_project(v, plane),
    }
}

/// Crop window on the plane grid plus the resize that placed it on the
/// canvas (top-left aligned, zero padded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanvasMapping {
    /// Plane grid extent (rows, cols) before cropping.
    pub plane_dims: (usize, usize),
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    /// Nominal isotropic scale `min(H / rows, W / cols)`.
    pub scale: f64,
    /// Extent of the resized crop on the canvas.
    pub resized: (usize, usize),
    pub canvas: (usize, usize),
}

impl CanvasMapping {
    /// Per-axis effective scale `resized / window`.
    pub fn axis_scales(&self) -> (f64, f64) {
        (
            self.resized.0 as f64 / self.rows as f64,
            self.resized.1 as f64 / self.cols as f64,
        )
    }

    /// Window-relative source coordinate of a canvas pixel centre.
    fn canvas_to_window(&self, r: usize, c: usize) -> (f64, f64) {
        let (sr, sc) = self.axis_scales();
        ((r as f64 + 0.5) / sr - 0.5, (c as f64 + 0.5) / sc - 0.5)
    }

    /// Canvas coordinate of a plane pixel centre, or `None` outside the
    /// crop window.
    pub fn plane_to_canvas(&self, a: usize, b: usize) -> Option<(f64, f64)> {
        if a < self.row0 || b < self.col0 || a >= self.row0 + self.rows || b >= self.col0 + self.cols {
            return None;
        }
        let (sr, sc) = self.axis_scales();
        Some((
            (a - self.row0) as f64 * sr + 0.5 * sr - 0.5,
            (b - self.col0) as f64 * sc + 0.5 * sc - 0.5,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedImage {
    pub ptype: ProjectionType,
    pub pixels: Grid2<f32>,
    pub mapping: CanvasMapping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedMask {
    pub ptype: ProjectionType,
    pub pixels: Grid2<bool>,
}

/// Crops image and mask to the mask bounding box plus [`BBOX_MARGIN`]
/// (clipped to the plane), resizes with bilinear / nearest sampling keeping
/// the aspect ratio, and zero-pads onto the canvas. Image pixels outside the
/// resized mask are zeroed so the mask always covers the image support.
pub fn crop_resize_to_canvas(
    img: &Grid2<f32>,
    mask: &Grid2<bool>,
    canvas: (usize, usize),
    ptype: ProjectionType,
) -> Result<(ProjectedImage, ProjectedMask)> {
    if (img.h, img.w) != (mask.h, mask.w) {
        return Err(Error::DimMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.h, img.w, mask.h, mask.w
        )));
    }
    if canvas.0 == 0 || canvas.1 == 0 {
        return Err(Error::InvalidArgument("canvas must be non-empty".into()));
    }
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..mask.h {
        for c in 0..mask.w {
            if mask.get(r, c) {
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                cmin = cmin.min(c);
                cmax = cmax.max(c);
            }
        }
    }
    if rmin == usize::MAX {
        return Err(Error::EmptyRegion(format!("projected mask for {ptype} is empty")));
    }
    let row0 = rmin.saturating_sub(BBOX_MARGIN);
    let col0 = cmin.saturating_sub(BBOX_MARGIN);
    let rows = (rmax + BBOX_MARGIN).min(mask.h - 1) + 1 - row0;
    let cols = (cmax + BBOX_MARGIN).min(mask.w - 1) + 1 - col0;
    let scale = (canvas.0 as f64 / rows as f64).min(canvas.1 as f64 / cols as f64);
    let rh = ((rows as f64 * scale).round() as usize).clamp(1, canvas.0);
    let rw = ((cols as f64 * scale).round() as usize).clamp(1, canvas.1);
    let mapping = CanvasMapping {
        plane_dims: (img.h, img.w),
        row0,
        col0,
        rows,
        cols,
        scale,
        resized: (rh, rw),
        canvas,
    };

    // Crop windows never leave the plane, so plain clamped bilinear sampling
    // of the window is enough.
    let window = Grid2::from_vec(
        rows,
        cols,
        (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| img.get(row0 + r, col0 + c))
            .collect(),
    );
    let mut out_img = Grid2::filled(canvas.0, canvas.1, 0f32);
    let mut out_mask = Grid2::filled(canvas.0, canvas.1, false);
    for r in 0..rh {
        let nr = nearest_sources(r, rh, rows);
        for c in 0..rw {
            let nc = nearest_sources(c, rw, cols);
            let m = nr
                .iter()
                .flatten()
                .any(|&a| nc.iter().flatten().any(|&b| mask.get(row0 + a, col0 + b)));
            out_mask.set(r, c, m);
            if m {
                let (fr, fc) = mapping.canvas_to_window(r, c);
                out_img.set(r, c, window.sample_bilinear(fr, fc).clamp(0.0, 1.0));
            }
        }
    }
    Ok((
        ProjectedImage {
            ptype,
            pixels: out_img,
            mapping,
        },
        ProjectedMask {
            ptype,
            pixels: out_mask,
        },
    ))
}

/// Source index under the centre of resized pixel `i`, computed exactly.
/// A centre falling on the border of two source pixels yields both, so the
/// resize commutes with mirroring.
fn nearest_sources(i: usize, resized: usize, window: usize) -> [Option<usize>; 2] {
    let num = (2 * i + 1) * window;
    let den = 2 * resized;
    let k = (num / den).min(window - 1);
    if num.is_multiple_of(den) && k > 0 {
        [Some(k - 1), Some(k)]
    } else {
        [Some(k), None]
    }
}

/// Projects one lung side onto one plane and places it on the canvas.
pub fn project_one(
    ct: &Volume,
    side_mask: &Volume,
    ptype: ProjectionType,
    method: ProjectionMethod,
    hu_window: (i16, i16),
    canvas: (usize, usize),
) -> Result<(ProjectedImage, ProjectedMask)> {
    let prepared = prepare_lung_volume(ct, side_mask, hu_window.0, hu_window.1)?;
    let img = project(&prepared, ptype.plane, method)?;
    let mask = project_mask(side_mask, ptype.plane)?;
    crop_resize_to_canvas(&img, &mask, canvas, ptype)
}

/// Projects a case onto the requested types (canonical order preserved).
pub fn project_case(
    ct: &Volume,
    lungs: &LungPair,
    method: ProjectionMethod,
    types: &[ProjectionType],
    hu_window: (i16, i16),
    canvas: (usize, usize),
) -> Result<Vec<(ProjectedImage, ProjectedMask)>> {
    ct.same_dims(&lungs.right)?;
    let mut out = Vec::with_capacity(types.len());
    for side in [Side::Right, Side::Left] {
        let mine: Vec<_> = types.iter().filter(|p| p.side == side).collect();
        if mine.is_empty() {
            continue;
        }
        let mask = lungs.side(side);
        let prepared = prepare_lung_volume(ct, mask, hu_window.0, hu_window.1)?;
        for &&p in &mine {
            let img = project(&prepared, p.plane, method)?;
            let m = project_mask(mask, p.plane)?;
            out.push(crop_resize_to_canvas(&img, &m, canvas, p)?);
        }
    }
    out.sort_by_key(|(img, _)| img.ptype.index());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_volume(dims: Dims, data: Vec<f32>) -> Volume {
        Volume::from_f32(dims, [1.0; 3], data).unwrap()
    }

    #[test]
    fn six_types_in_canonical_order() {
        let names: Vec<_> = ProjectionType::ALL.iter().map(|p| p.as_str()).collect();
        assert_eq!(
            names,
            ["right_sagittal", "right_coronal", "right_axial", "left_sagittal", "left_coronal", "left_axial"]
        );
        for p in ProjectionType::ALL {
            assert_eq!(p.as_str().parse::<ProjectionType>().unwrap(), p);
        }
        assert_eq!(ProjectionSet::CoronalOnly.types().len(), 2);
        assert_eq!(ProjectionSet::CoronalAxial.types().len(), 4);
        assert_eq!(ProjectionSet::AllThree.types(), ProjectionType::ALL.to_vec());
    }

    #[test]
    fn prepare_masks_and_normalizes() {
        let ct = Volume::from_i16([1, 1, 4], [1.0; 3], vec![40, -400, -900, -400]).unwrap();
        let lung = Volume::from_u8([1, 1, 4], [1.0; 3], vec![0, 1, 1, 0]).unwrap();
        let v = prepare_lung_volume(&ct, &lung, -800, 0).unwrap();
        assert_eq!(v.as_f32().unwrap(), &[0.0, 0.5, 0.0, 0.0]);
        let bad = Volume::from_u8([1, 2, 2], [1.0; 3], vec![0; 4]).unwrap();
        assert!(prepare_lung_volume(&ct, &bad, -800, 0).is_err());
    }

    #[test]
    fn column_max_and_mean() {
        let v = unit_volume([2, 1, 1], vec![0.1, 0.9]);
        assert_eq!(mip_project(&v, Plane::Axial).unwrap().data, vec![0.9]);
        assert!((aip_project(&v, Plane::Axial).unwrap().data[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn constant_volume_projects_to_constant() {
        let v = unit_volume([3, 4, 5], vec![0.3; 60]);
        for plane in [Plane::Axial, Plane::Coronal, Plane::Sagittal] {
            let m = mip_project(&v, plane).unwrap();
            let a = aip_project(&v, plane).unwrap();
            assert_eq!((m.h, m.w), plane.plane_dims([3, 4, 5]));
            assert!(m.data.iter().all(|&x| x == 0.3));
            assert!(a.data.iter().all(|&x| (x - 0.3).abs() < 1e-6));
        }
    }

    #[test]
    fn mask_projection() {
        let dims = [3, 4, 5];
        let empty = Volume::from_u8(dims, [1.0; 3], vec![0; 60]).unwrap();
        assert!(project_mask(&empty, Plane::Coronal).unwrap().data.iter().all(|&b| !b));
        let full = Volume::from_u8(dims, [1.0; 3], vec![1; 60]).unwrap();
        assert!(project_mask(&full, Plane::Sagittal).unwrap().data.iter().all(|&b| b));

        let mut one = vec![0u8; 60];
        one[linear_index(dims, 2, 1, 3)] = 1;
        let one = Volume::from_u8(dims, [1.0; 3], one).unwrap();
        let g = project_mask(&one, Plane::Coronal).unwrap();
        assert_eq!(g.data.iter().filter(|&&b| b).count(), 1);
        assert!(g.get(2, 3));
        let g = project_mask(&one, Plane::Sagittal).unwrap();
        assert!(g.get(2, 1));
        let g = project_mask(&one, Plane::Axial).unwrap();
        assert!(g.get(1, 3));
    }

    #[test]
    fn full_canvas_is_identity() {
        let ptype = ProjectionType::ALL[0];
        let img = Grid2::from_vec(8, 8, (0..64).map(|i| i as f32 / 64.0).collect());
        let mask = Grid2::filled(8, 8, true);
        let (pi, pm) = crop_resize_to_canvas(&img, &mask, (8, 8), ptype).unwrap();
        assert_eq!(pi.pixels, img);
        assert_eq!(pm.pixels, mask);
        assert_eq!(pi.mapping.scale, 1.0);
    }

    #[test]
    fn scale_uses_bbox_plus_margin() {
        let ptype = ProjectionType::ALL[1];
        let img = Grid2::filled(100, 100, 0.5f32);
        let mut mask = Grid2::filled(100, 100, false);
        for r in 40..50 {
            for c in 30..50 {
                mask.set(r, c, true);
            }
        }
        let (pi, _) = crop_resize_to_canvas(&img, &mask, (256, 256), ptype).unwrap();
        assert_eq!(pi.mapping.scale, 256.0 / 24.0);
        assert_eq!((pi.mapping.rows, pi.mapping.cols), (14, 24));
        assert_eq!(pi.mapping.resized, (149, 256));
        let empty = Grid2::filled(100, 100, false);
        assert!(matches!(
            crop_resize_to_canvas(&img, &empty, (256, 256), ptype),
            Err(Error::EmptyRegion(_))
        ));
    }
}
