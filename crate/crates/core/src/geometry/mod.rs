//! Point sets, triangle meshes, the pinhole camera, and the spatial queries
//! built on them.

mod backproject;
mod kdtree;
mod mesh;
mod obj;
mod voxel;

pub use backproject::{backproject, backproject_at, tessellate_background, TessellateOptions};
pub use kdtree::{nearest_neighbor, KdTree, Neighbor};
pub use mesh::TriangleMesh;
pub use obj::{load_obj, read_obj, save_obj, write_obj};
pub use voxel::{aabb_iou, voxel_downsample, voxelize, volumetric_iou, Aabb, OverlapMeasure, VoxelGrid};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Rgb;

pub type Vec3 = Vector3<f64>;

/// Pinhole intrinsics. Pixel `(i, j)` has its center at image-plane
/// coordinate `(i + 0.5, j + 0.5)`; the camera looks down +z with +y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument("camera focal lengths must be positive".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidArgument("principal point outside the image".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Continuous pixel-index coordinates of a camera-space point.
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx - 0.5,
            self.fy * p.y / p.z + self.cy - 0.5,
        )
    }

    /// Camera-space point at depth `z` behind pixel-index coordinates `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new(
            (u + 0.5 - self.cx) * z / self.fx,
            (v + 0.5 - self.cy) * z / self.fy,
            z,
        )
    }

    /// Half field of view that fits inside the image on every side.
    pub fn min_half_fov(&self) -> f64 {
        let hx = self.cx.min(self.width as f64 - self.cx) / self.fx;
        let hy = self.cy.min(self.height as f64 - self.cy) / self.fy;
        hx.min(hy).atan()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<Vec3>,
    pub colors: Option<Vec<Rgb>>,
}

impl PointSet {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            colors: None,
        }
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Self {
        Self::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vec3 = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Root-mean-square distance to the centroid.
    pub fn rms_spread(&self) -> Option<f64> {
        let c = self.centroid()?;
        let ss: f64 = self.points.iter().map(|p| (p - c).norm_squared()).sum();
        Some((ss / self.points.len() as f64).sqrt())
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }

    pub fn subset(&self, indices: &[usize]) -> PointSet {
        PointSet {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }
}
