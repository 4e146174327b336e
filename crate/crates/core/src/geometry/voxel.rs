use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PointSet, TriangleMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points(points: &[Vec3]) -> Option<Self> {
        let first = points.first()?;
        let (mut min, mut max) = (*first, *first);
        for p in &points[1..] {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Self { min, max })
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let min = self.min.sup(&other.min);
        let max = self.max.inf(&other.max);
        (min.x <= max.x && min.y <= max.y && min.z <= max.z).then_some(Aabb { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }
}

/// One centroid per occupied voxel of edge `voxel`, in voxel-key order.
pub fn voxel_downsample(p: &PointSet, voxel: f64) -> Result<PointSet> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidArgument(format!("voxel size must be positive, got {voxel}")));
    }
    let mut cells: BTreeMap<[i64; 3], (Vec3, [f64; 3], usize)> = BTreeMap::new();
    for (i, pt) in p.points.iter().enumerate() {
        let key = [0, 1, 2].map(|a| (pt[a] / voxel).floor() as i64);
        let entry = cells.entry(key).or_insert((Vec3::zeros(), [0.0; 3], 0));
        entry.0 += pt;
        if let Some(c) = &p.colors {
            for k in 0..3 {
                entry.1[k] += c[i][k] as f64;
            }
        }
        entry.2 += 1;
    }
    let mut points = Vec::with_capacity(cells.len());
    let mut colors = Vec::with_capacity(cells.len());
    for (sum, csum, n) in cells.into_values() {
        points.push(sum / n as f64);
        colors.push(csum.map(|c| (c / n as f64) as f32));
    }
    Ok(PointSet {
        points,
        colors: p.colors.as_ref().map(|_| colors),
    })
}

/// Occupancy over a regular grid spanning `bounds`, `res` cells per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub bounds: Aabb,
    pub res: usize,
    pub occupied: Vec<bool>,
}

impl VoxelGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res + j) * self.res + i
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let size = self.bounds.extent() / self.res as f64;
        self.bounds.min
            + Vec3::new(
                (i as f64 + 0.5) * size.x,
                (j as f64 + 0.5) * size.y,
                (k as f64 + 0.5) * size.z,
            )
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|b| **b).count()
    }
}

/// Interior fill by ray parity: one ray along +x through every (y, z) cell
/// center, voxels between alternate crossings are inside.
pub fn voxelize(mesh: &TriangleMesh, bounds: Aabb, res: usize) -> VoxelGrid {
    let size = bounds.extent() / res as f64;
    let mut grid = VoxelGrid {
        bounds,
        res,
        occupied: vec![false; res * res * res],
    };
    // tiny irrational offsets keep rays off shared triangle edges
    let jy = size.y * 1.234_567e-7 * std::f64::consts::SQRT_2;
    let jz = size.z * 2.718_281e-7 * std::f64::consts::FRAC_1_PI;
    let ray_y = |j: usize| bounds.min.y + (j as f64 + 0.5) * size.y + jy;
    let ray_z = |k: usize| bounds.min.z + (k as f64 + 0.5) * size.z + jz;
    let mut hits: Vec<Vec<f64>> = vec![Vec::new(); res * res];
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(t);
        let det = (b.y - a.y) * (c.z - a.z) - (c.y - a.y) * (b.z - a.z);
        if det.abs() < 1e-300 {
            continue;
        }
        let lo_y = a.y.min(b.y).min(c.y);
        let hi_y = a.y.max(b.y).max(c.y);
        let lo_z = a.z.min(b.z).min(c.z);
        let hi_z = a.z.max(b.z).max(c.z);
        let j0 = (((lo_y - bounds.min.y) / size.y - 0.5).floor().max(0.0)) as usize;
        let j1 = (((hi_y - bounds.min.y) / size.y - 0.5).ceil().max(0.0) as usize).min(res - 1);
        let k0 = (((lo_z - bounds.min.z) / size.z - 0.5).floor().max(0.0)) as usize;
        let k1 = (((hi_z - bounds.min.z) / size.z - 0.5).ceil().max(0.0) as usize).min(res - 1);
        for k in k0..=k1 {
            let z = ray_z(k);
            for j in j0..=j1 {
                let y = ray_y(j);
                // barycentrics of (y, z) in the yz projection
                let u = ((y - a.y) * (c.z - a.z) - (c.y - a.y) * (z - a.z)) / det;
                let v = ((b.y - a.y) * (z - a.z) - (y - a.y) * (b.z - a.z)) / det;
                if u >= 0.0 && v >= 0.0 && u + v <= 1.0 {
                    let x = a.x + u * (b.x - a.x) + v * (c.x - a.x);
                    hits[k * res + j].push(x);
                }
            }
        }
    }
    for k in 0..res {
        for j in 0..res {
            let xs = &mut hits[k * res + j];
            if xs.len() < 2 {
                continue;
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                let i0 = ((pair[0] - bounds.min.x) / size.x - 0.5).ceil().max(0.0) as usize;
                let i1f = ((pair[1] - bounds.min.x) / size.x - 0.5).floor();
                if i1f < 0.0 {
                    continue;
                }
                let i1 = (i1f as usize).min(res - 1);
                for i in i0..=i1 {
                    let idx = grid.index(i, j, k);
                    grid.occupied[idx] = true;
                }
            }
        }
    }
    grid
}

/// Voxel IoU of two closed meshes over their joint bounding box.
pub fn volumetric_iou(a: &TriangleMesh, b: &TriangleMesh, resolution: usize) -> Result<f64> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!("resolution must be at least 8, got {resolution}")));
    }
    let (ba, bb) = match (a.bounds(), b.bounds()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::EmptyUnion),
    };
    if ba.intersection(&bb).is_none() {
        return Ok(0.0);
    }
    let bounds = ba.union(&bb);
    if bounds.volume() <= 0.0 {
        return Err(Error::EmptyUnion);
    }
    let ga = voxelize(a, bounds, resolution);
    let gb = voxelize(b, bounds, resolution);
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in ga.occupied.iter().zip(&gb.occupied) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    if union == 0 {
        return Err(Error::EmptyUnion);
    }
    Ok(inter as f64 / union as f64)
}

/// IoU of the axis-aligned bounding boxes.
pub fn aabb_iou(a: &TriangleMesh, b: &TriangleMesh) -> Result<f64> {
    let (ba, bb) = match (a.bounds(), b.bounds()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::EmptyUnion),
    };
    let inter = ba.intersection(&bb).map_or(0.0, |i| i.volume());
    let union = ba.volume() + bb.volume() - inter;
    if union <= 0.0 {
        return Err(Error::EmptyUnion);
    }
    Ok(inter / union)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OverlapMeasure {
    Volumetric { resolution: usize },
    BoundingBox,
}

impl Default for OverlapMeasure {
    fn default() -> Self {
        OverlapMeasure::Volumetric { resolution: 64 }
    }
}

impl OverlapMeasure {
    pub fn iou(&self, a: &TriangleMesh, b: &TriangleMesh) -> Result<f64> {
        match *self {
            OverlapMeasure::Volumetric { resolution } => volumetric_iou(a, b, resolution),
            OverlapMeasure::BoundingBox => aabb_iou(a, b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube_at(x: f64) -> TriangleMesh {
        TriangleMesh::cuboid(Vec3::repeat(0.5), [0.5; 3]).map_vertices(|v| v + Vec3::new(x + 0.5, 0.5, 0.5))
    }

    #[test]
    fn downsample_merges_and_preserves() {
        let p = PointSet::from_arrays(&[[0.1, 0.1, 0.1], [0.3, 0.3, 0.3]]);
        let d = voxel_downsample(&p, 1.0).unwrap();
        assert_eq!(d.points.len(), 1);
        assert!((d.points[0] - Vec3::repeat(0.2)).norm() < 1e-15);

        let spread = PointSet::from_arrays(&[[0.5, 0.5, 0.5], [1.5, 0.5, 0.5], [0.5, 2.5, 0.5]]);
        let d = voxel_downsample(&spread, 1.0).unwrap();
        let mut got = d.points.clone();
        let mut want = spread.points.clone();
        let key = |v: &Vec3| (v.x * 10.0) as i64 * 1000 + (v.y * 10.0) as i64;
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(got, want);
        assert!(voxel_downsample(&p, 0.0).is_err());
    }

    #[test]
    fn downsample_unit_cube_half_voxel() {
        // occupied voxels enumerated independently: at most 2 per axis
        let pts: Vec<Vec3> = (0..1000)
            .map(|i| {
                let f = |k: u64| ((i as u64 * k) % 997) as f64 / 997.0;
                Vec3::new(f(13), f(101), f(389))
            })
            .collect();
        let d = voxel_downsample(&PointSet::new(pts), 0.5).unwrap();
        assert!(d.len() <= 8);
        for p in &d.points {
            assert!(p.iter().all(|c| (0.0..1.0).contains(c)));
        }
    }

    #[test]
    fn iou_identity_disjoint_and_shift() {
        let a = unit_cube_at(0.0);
        let same = volumetric_iou(&a, &a, 64).unwrap();
        assert!((same - 1.0).abs() <= 1.0 / 64.0);
        assert_eq!(volumetric_iou(&a, &unit_cube_at(3.0), 64).unwrap(), 0.0);
        let shifted = volumetric_iou(&a, &unit_cube_at(0.5), 64).unwrap();
        assert!((shifted - 1.0 / 3.0).abs() < 0.05, "{shifted}");
        assert!(volumetric_iou(&a, &a, 4).is_err());
    }

    #[test]
    fn iou_is_symmetric() {
        let a = TriangleMesh::uv_sphere(0.6, 20, 10, [0.5; 3]);
        let b = unit_cube_at(-0.3);
        let ab = volumetric_iou(&a, &b, 40).unwrap();
        let ba = volumetric_iou(&b, &a, 40).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn voxelized_sphere_volume() {
        let s = TriangleMesh::uv_sphere(1.0, 48, 24, [0.5; 3]);
        let b = s.bounds().unwrap();
        let g = voxelize(&s, b, 48);
        let cell = b.volume() / (48f64).powi(3);
        let vol = g.count() as f64 * cell;
        assert!((vol - 4.0 / 3.0 * std::f64::consts::PI).abs() < 0.1, "{vol}");
    }

    #[test]
    fn aabb_iou_half_overlap() {
        let a = unit_cube_at(0.0);
        let iou = aabb_iou(&a, &unit_cube_at(0.5)).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
    }
}
