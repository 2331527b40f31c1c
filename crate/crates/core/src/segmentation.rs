//! Lung masks: left/right separation, a threshold segmenter for synthetic
//! phantoms, and overlap scores.
//!
//! Orientation convention: the patient's right lung is the component with the
//! lower mean x index.

use crate::error::{Error, Result};
use crate::labeling::{close, fill_holes, label_components};
use crate::volume::{Dims, Volume};

/// HU band considered lung parenchyma by [`threshold_segment_phantom`].
pub const LUNG_BAND_HU: (i16, i16) = (-950, -500);

/// Closing radius applied after thresholding.
pub const CLOSING_RADIUS: usize = 2;

/// Right and left lung masks, each a `{0,1}` volume on the source grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LungPair {
    pub right: Volume,
    pub left: Volume,
}

impl LungPair {
    pub fn new(right: Volume, left: Volume) -> Result<Self> {
        right.same_dims(&left)?;
        let (r, l) = (right.foreground()?, left.foreground()?);
        if !right.is_binary() || !left.is_binary() {
            return Err(Error::InvalidArgument("lung masks must be binary".into()));
        }
        if !r.iter().any(|&v| v) || !l.iter().any(|&v| v) {
            return Err(Error::EmptyRegion("lung mask is empty".into()));
        }
        if r.iter().zip(&l).any(|(&a, &b)| a && b) {
            return Err(Error::InvalidArgument("lung masks overlap".into()));
        }
        Ok(LungPair { right, left })
    }

    pub fn dims(&self) -> Dims {
        self.right.dims()
    }

    pub fn side(&self, side: crate::projection::Side) -> &Volume {
        match side {
            crate::projection::Side::Right => &self.right,
            crate::projection::Side::Left => &self.left,
        }
    }

    /// Whole volume cut at the middle `x` column (low `x` is right), used
    /// when running without lung segmentation.
    pub fn halves(dims: Dims, spacing: crate::volume::Spacing) -> Result<Self> {
        if dims[2] < 2 {
            return Err(Error::CannotSplit(format!("x extent {} cannot be halved", dims[2])));
        }
        let half = dims[2] / 2;
        let n = crate::volume::voxel_count(dims);
        let right: Vec<u8> = (0..n).map(|i| u8::from(i % dims[2] < half)).collect();
        let left = right.iter().map(|&r| 1 - r).collect();
        LungPair::new(
            Volume::from_u8(dims, spacing, right)?,
            Volume::from_u8(dims, spacing, left)?,
        )
    }

    /// `{0, 1, 2}` label volume (1 right, 2 left).
    pub fn to_labels(&self) -> Result<Volume> {
        let data = self
            .right
            .as_u8()?
            .iter()
            .zip(self.left.as_u8()?)
            .map(|(&r, &l)| if r != 0 { 1 } else if l != 0 { 2 } else { 0 })
            .collect();
        Volume::from_u8(self.dims(), self.right.spacing(), data)
    }
}

fn mean_x(mask: &[bool], dims: Dims) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        sum += (i % dims[2]) as f64;
        n += 1;
    }
    sum / n as f64
}

/// Splits a lung mask into right and left voxel groups.
///
/// Masks that already carry labels 1 (right) and 2 (left) are passed
/// through. Binary masks are split by 6-connected labeling, keeping the two
/// largest components.
pub fn split_left_right(mask: &Volume) -> Result<LungPair> {
    let data = mask.as_u8()?;
    let dims = mask.dims();
    let spacing = mask.spacing();
    if !data.iter().any(|&v| v != 0) {
        return Err(Error::EmptyRegion("lung mask has no foreground".into()));
    }
    if data.contains(&2) {
        let right: Vec<bool> = data.iter().map(|&v| v == 1).collect();
        let left: Vec<bool> = data.iter().map(|&v| v == 2).collect();
        return LungPair::new(
            Volume::from_mask(dims, spacing, &right)?,
            Volume::from_mask(dims, spacing, &left)?,
        );
    }
    let fg: Vec<bool> = data.iter().map(|&v| v != 0).collect();
    let comps = label_components(&fg, dims);
    if comps.count() < 2 {
        return Err(Error::CannotSplit(format!(
            "binary mask has {} connected component(s), need 2",
            comps.count()
        )));
    }
    let (a, b) = two_largest(&comps.sizes, |_| true);
    let ma = comps.mask_of(a);
    let mb = comps.mask_of(b);
    let (right, left) = if mean_x(&ma, dims) <= mean_x(&mb, dims) {
        (ma, mb)
    } else {
        (mb, ma)
    };
    LungPair::new(
        Volume::from_mask(dims, spacing, &right)?,
        Volume::from_mask(dims, spacing, &left)?,
    )
}

/// Ids of the two largest admissible components; ties go to the lower id.
fn two_largest(sizes: &[usize], admissible: impl Fn(usize) -> bool) -> (u32, u32) {
    let mut order: Vec<usize> = (0..sizes.len()).filter(|&k| admissible(k)).collect();
    order.sort_by(|&p, &q| sizes[q].cmp(&sizes[p]).then(p.cmp(&q)));
    (order[0] as u32 + 1, order[1] as u32 + 1)
}

/// Lung segmentation for synthetic phantoms: HU band threshold, the two
/// largest components not touching the grid boundary, closing with a
/// radius-2 ball, cavity filling, then left/right labeling.
pub fn threshold_segment_phantom(ct: &Volume) -> Result<Volume> {
    let hu = ct.as_i16()?;
    let dims = ct.dims();
    let band: Vec<bool> = hu
        .iter()
        .map(|&v| (LUNG_BAND_HU.0..=LUNG_BAND_HU.1).contains(&v))
        .collect();
    let comps = label_components(&band, dims);
    let interior = (0..comps.count())
        .filter(|&k| !comps.touches_border[k])
        .count();
    if interior < 2 {
        return Err(Error::Segmentation(format!(
            "found {interior} interior component(s) in the lung HU band, need 2"
        )));
    }
    let (a, b) = two_largest(&comps.sizes, |k| !comps.touches_border[k]);
    let kept: Vec<bool> = comps.labels.iter().map(|&l| l == a || l == b).collect();
    let filled = fill_holes(&close(&kept, dims, CLOSING_RADIUS), dims);
    let pair = split_left_right(&Volume::from_mask(dims, ct.spacing(), &filled)?)?;
    pair.to_labels()
}

fn overlap_counts(a: &Volume, b: &Volume) -> Result<(usize, usize, usize)> {
    a.same_dims(b)?;
    let (da, db) = (a.as_u8()?, b.as_u8()?);
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in da.iter().zip(db) {
        let (x, y) = (x != 0, y != 0);
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    Ok((inter, na, nb))
}

/// Dice coefficient `2|a∩b| / (|a| + |b|)` over nonzero voxels; 1.0 when both
/// masks are empty.
pub fn dice(a: &Volume, b: &Volume) -> Result<f64> {
    let (inter, na, nb) = overlap_counts(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Intersection over union over nonzero voxels; 1.0 when both are empty.
pub fn iou(a: &Volume, b: &Volume) -> Result<f64> {
    let (inter, na, nb) = overlap_counts(a, b)?;
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Binary mask of voxels equal to `label`.
pub fn label_mask(labels: &Volume, label: u8) -> Result<Volume> {
    let m: Vec<bool> = labels.as_u8()?.iter().map(|&v| v == label).collect();
    Volume::from_mask(labels.dims(), labels.spacing(), &m)
}

#[cfg(test)]
pub(crate) fn set_box(mask: &mut [bool], dims: Dims, lo: [usize; 3], hi: [usize; 3]) {
    for z in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for x in lo[2]..hi[2] {
                mask[crate::volume::linear_index(dims, z, y, x)] = true;
            }
        }
    }
}
