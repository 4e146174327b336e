//! Exact nearest-neighbour search over a static 3D point set.
//!
//! The tree is stored implicitly: `order` is a permutation of the input
//! indices in which each subrange's median element splits the range on the
//! axis recorded in `axis`.

use super::{PointSet, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axis = vec![0u8; points.len()];
        split(points, &mut order, &mut axis);
        Self {
            points: points.to_vec(),
            order,
            axis,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point, ties broken toward the lower index. `max_dist` bounds
    /// the search (inclusive).
    pub fn nearest(&self, q: &Vec3, max_dist: Option<f64>) -> Option<Neighbor> {
        let mut best = Best {
            index: usize::MAX,
            dist2: max_dist.map_or(f64::INFINITY, |r| r * r),
        };
        self.search(q, 0, self.order.len(), &mut best);
        (best.index != usize::MAX).then(|| Neighbor {
            index: best.index,
            distance: best.dist2.sqrt(),
        })
    }

    /// All indices within `radius` of `q`, in ascending index order.
    pub fn within(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect(q, radius * radius, 0, self.order.len(), &mut out);
        out.sort_unstable();
        out
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut Best) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 < best.dist2 || (d2 == best.dist2 && idx < best.index) {
            best.index = idx;
            best.dist2 = d2;
        }
        let a = self.axis[mid] as usize;
        let delta = q[a] - p[a];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if delta * delta <= best.dist2 {
            self.search(q, far.0, far.1, best);
        }
    }

    fn collect(&self, q: &Vec3, r2: f64, lo: usize, hi: usize, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        if (p - q).norm_squared() <= r2 {
            out.push(idx);
        }
        let a = self.axis[mid] as usize;
        let delta = q[a] - p[a];
        if delta <= 0.0 || delta * delta <= r2 {
            self.collect(q, r2, lo, mid, out);
        }
        if delta >= 0.0 || delta * delta <= r2 {
            self.collect(q, r2, mid + 1, hi, out);
        }
    }
}

struct Best {
    index: usize,
    dist2: f64,
}

fn split(points: &[Vec3], order: &mut [usize], axis: &mut [u8]) {
    if order.len() <= 1 {
        if let Some(a) = axis.first_mut() {
            *a = 0;
        }
        return;
    }
    // split on the axis of largest extent
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let ext = hi - lo;
    let a = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&i, &j| points[i][a].total_cmp(&points[j][a]));
    axis[mid] = a as u8;
    let (left, right) = order.split_at_mut(mid);
    let (axis_left, axis_right) = axis.split_at_mut(mid);
    split(points, left, axis_left);
    split(points, &mut right[1..], &mut axis_right[1..]);
}

/// Exact nearest target for every query point; matches farther than
/// `radius` are reported as `None`.
pub fn nearest_neighbor(
    query: &PointSet,
    target: &PointSet,
    radius: Option<f64>,
) -> Result<Vec<Option<Neighbor>>> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let tree = KdTree::build(&target.points);
    Ok(query.points.iter().map(|q| tree.nearest(q, radius)).collect())
}
