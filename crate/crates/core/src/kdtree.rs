//! Exact nearest-neighbour search over a fixed point set.
//!
//! Nodes carry axis-aligned bounding boxes; a subtree is skipped only when
//! its box lower bound is strictly greater than the best distance so far, so
//! results (including the lowest-index tie rule) match an exhaustive scan.

const LEAF_SIZE: usize = 16;

/// Squared Euclidean distance accumulated in f64 in dimension order.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    /// Points in tree order.
    points: Vec<f32>,
    /// Original index of each point in tree order.
    ids: Vec<usize>,
    nodes: Vec<Node>,
    /// `[lo; dim]` then `[hi; dim]` per node.
    bounds: Vec<f32>,
}

impl KdTree {
    /// Builds over `data`, a flat array of `data.len() / dim` points.
    pub fn new(data: &[f32], dim: usize) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        let n = data.len() / dim;
        let mut ids: Vec<usize> = (0..n).collect();
        let mut tree = KdTree {
            dim,
            points: Vec::new(),
            ids: Vec::new(),
            nodes: Vec::new(),
            bounds: Vec::new(),
        };
        if n > 0 {
            tree.build(data, &mut ids, 0, n);
        }
        tree.points = ids
            .iter()
            .flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied())
            .collect();
        tree.ids = ids;
        tree
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn build(&mut self, data: &[f32], ids: &mut [usize], start: usize, end: usize) -> usize {
        let dim = self.dim;
        let node = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        let mut lo = vec![f32::INFINITY; dim];
        let mut hi = vec![f32::NEG_INFINITY; dim];
        for &i in &ids[start..end] {
            for k in 0..dim {
                let v = data[i * dim + k];
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);
        if end - start <= LEAF_SIZE {
            return node;
        }
        let (axis, spread) = (0..dim)
            .map(|k| (k, hi[k] - lo[k]))
            .fold((0, -1.0f32), |best, c| if c.1 > best.1 { c } else { best });
        if spread <= 0.0 {
            return node;
        }
        let mid = (start + end) / 2;
        ids[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a * dim + axis]
                .total_cmp(&data[b * dim + axis])
                .then(a.cmp(&b))
        });
        let left = self.build(data, ids, start, mid);
        let right = self.build(data, ids, mid, end);
        self.nodes[node] = Node::Split { left, right };
        node
    }

    fn box_lower_bound(&self, node: usize, q: &[f32]) -> f64 {
        let base = node * 2 * self.dim;
        let lo = &self.bounds[base..base + self.dim];
        let hi = &self.bounds[base + self.dim..base + 2 * self.dim];
        let mut acc = 0.0f64;
        for k in 0..self.dim {
            let v = q[k] as f64;
            let d = if v < lo[k] as f64 {
                lo[k] as f64 - v
            } else if v > hi[k] as f64 {
                v - hi[k] as f64
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }

    /// `(squared distance, original index)` of the nearest point; ties go to
    /// the lowest original index. `None` for an empty tree.
    pub fn nearest(&self, q: &[f32]) -> Option<(f64, usize)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &[f32], best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for t in start..end {
                    let p = &self.points[t * self.dim..(t + 1) * self.dim];
                    let d = sq_dist(q, p);
                    let id = self.ids[t];
                    if d < best.0 || (d == best.0 && id < best.1) {
                        *best = (d, id);
                    }
                }
            }
            Node::Split { left, right } => {
                let bl = self.box_lower_bound(left, q);
                let br = self.box_lower_bound(right, q);
                let order = if bl <= br {
                    [(left, bl), (right, br)]
                } else {
                    [(right, br), (left, bl)]
                };
                for (child, lb) in order {
                    if lb <= best.0 {
                        self.search(child, q, best);
                    }
                }
            }
        }
    }
}
