//! 6-connected component labeling and binary morphology on 3D boolean grids.

use std::collections::VecDeque;

use crate::volume::{linear_index, voxel_count, Dims};

/// Connected components of a boolean grid.
#[derive(Debug, Clone)]
pub struct Components {
    /// Component id per voxel; 0 is background, components are numbered from 1
    /// in order of their first voxel in z→y→x scan order.
    pub labels: Vec<u32>,
    /// `sizes[k]` is the voxel count of component `k + 1`.
    pub sizes: Vec<usize>,
    /// Whether component `k + 1` touches the grid boundary.
    pub touches_border: Vec<bool>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn mask_of(&self, id: u32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == id).collect()
    }
}

fn on_border(dims: Dims, z: usize, y: usize, x: usize) -> bool {
    z == 0 || y == 0 || x == 0 || z + 1 == dims[0] || y + 1 == dims[1] || x + 1 == dims[2]
}

/// Visits the in-bounds 6-neighbours of `(z, y, x)`.
#[inline]
pub(crate) fn for_each_neighbor6(
    dims: Dims,
    z: usize,
    y: usize,
    x: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    if z > 0 {
        f(z - 1, y, x);
    }
    if z + 1 < dims[0] {
        f(z + 1, y, x);
    }
    if y > 0 {
        f(z, y - 1, x);
    }
    if y + 1 < dims[1] {
        f(z, y + 1, x);
    }
    if x > 0 {
        f(z, y, x - 1);
    }
    if x + 1 < dims[2] {
        f(z, y, x + 1);
    }
}

pub fn label_components(mask: &[bool], dims: Dims) -> Components {
    assert_eq!(mask.len(), voxel_count(dims));
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut touches_border = Vec::new();
    let mut queue = VecDeque::new();
    let plane = dims[1] * dims[2];

    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        let mut size = 0usize;
        let mut border = false;
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (z, rem) = (i / plane, i % plane);
            let (y, x) = (rem / dims[2], rem % dims[2]);
            border |= on_border(dims, z, y, x);
            for_each_neighbor6(dims, z, y, x, |nz, ny, nx| {
                let j = linear_index(dims, nz, ny, nx);
                if mask[j] && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            });
        }
        sizes.push(size);
        touches_border.push(border);
    }
    Components {
        labels,
        sizes,
        touches_border,
    }
}

/// Offsets of a digital ball of the given radius.
fn ball_offsets(radius: usize) -> Vec<(isize, isize, isize)> {
    let r = radius as isize;
    let r2 = r * r;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dz * dz + dy * dy + dx * dx <= r2 {
                    out.push((dz, dy, dx));
                }
            }
        }
    }
    out
}

/// Applies a ball structuring element. For dilation a voxel is set if any
/// ball neighbour is set; for erosion it stays set only if every ball
/// neighbour is set. Out-of-grid neighbours read as `outside`.
fn ball_filter(mask: &[bool], dims: Dims, radius: usize, dilate: bool, outside: bool) -> Vec<bool> {
    let offsets = ball_offsets(radius);
    let mut out = vec![false; mask.len()];
    let d = [dims[0] as isize, dims[1] as isize, dims[2] as isize];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let i = linear_index(dims, z, y, x);
                if dilate && mask[i] {
                    out[i] = true;
                    continue;
                }
                if !dilate && !mask[i] {
                    continue;
                }
                let mut hit = !dilate;
                for &(dz, dy, dx) in &offsets {
                    let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    let v = if nz < 0 || ny < 0 || nx < 0 || nz >= d[0] || ny >= d[1] || nx >= d[2] {
                        outside
                    } else {
                        mask[linear_index(dims, nz as usize, ny as usize, nx as usize)]
                    };
                    if dilate && v {
                        hit = true;
                        break;
                    }
                    if !dilate && !v {
                        hit = false;
                        break;
                    }
                }
                out[i] = hit;
            }
        }
    }
    out
}

pub fn dilate(mask: &[bool], dims: Dims, radius: usize) -> Vec<bool> {
    ball_filter(mask, dims, radius, true, false)
}

pub fn erode(mask: &[bool], dims: Dims, radius: usize) -> Vec<bool> {
    ball_filter(mask, dims, radius, false, true)
}

/// Morphological closing (dilation then erosion) with a ball. The result is a
/// superset of the input.
pub fn close(mask: &[bool], dims: Dims, radius: usize) -> Vec<bool> {
    erode(&dilate(mask, dims, radius), dims, radius)
}

/// Sets every background voxel that is not 6-connected to the grid boundary.
pub fn fill_holes(mask: &[bool], dims: Dims) -> Vec<bool> {
    let background: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let comps = label_components(&background, dims);
    mask.iter()
        .zip(&comps.labels)
        .map(|(&m, &l)| m || (l != 0 && !comps.touches_border[l as usize - 1]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(dims: Dims, lo: [usize; 3], hi: [usize; 3]) -> Vec<bool> {
        let mut m = vec![false; voxel_count(dims)];
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    m[linear_index(dims, z, y, x)] = true;
                }
            }
        }
        m
    }

    #[test]
    fn labels_two_cubes() {
        let dims = [6, 6, 12];
        let mut m = cube(dims, [1, 1, 1], [3, 3, 3]);
        let other = cube(dims, [2, 2, 6], [6, 5, 11]);
        m.iter_mut().zip(&other).for_each(|(a, &b)| *a |= b);
        let c = label_components(&m, dims);
        assert_eq!(c.count(), 2);
        assert_eq!(c.sizes, vec![8, 60]);
        assert_eq!(c.touches_border, vec![false, true]);
    }

    #[test]
    fn diagonal_voxels_are_separate() {
        let dims = [1, 2, 2];
        let c = label_components(&[true, false, false, true], dims);
        assert_eq!(c.count(), 2);
    }

    #[test]
    fn closing_fills_gap_and_holes_fill() {
        let dims = [9, 9, 15];
        let mut m = cube(dims, [2, 2, 2], [7, 7, 13]);
        // One-voxel slot through the middle of the slab.
        for z in 2..7 {
            for y in 2..7 {
                m[linear_index(dims, z, y, 7)] = false;
            }
        }
        let closed = close(&m, dims, 2);
        assert!(closed.iter().zip(&m).all(|(&c, &o)| c || !o));
        assert!(closed[linear_index(dims, 4, 4, 7)]);

        let mut shell = cube(dims, [1, 1, 1], [8, 8, 14]);
        let inner = cube(dims, [3, 3, 3], [6, 6, 12]);
        shell.iter_mut().zip(&inner).for_each(|(a, &b)| *a &= !b);
        let filled = fill_holes(&shell, dims);
        assert_eq!(filled, cube(dims, [1, 1, 1], [8, 8, 14]));
    }
}
