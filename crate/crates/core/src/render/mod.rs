//! Pinhole z-buffer rasteriser. Inverse depth is interpolated linearly in
//! screen space, colours perspective-correctly; no culling, no lighting.

use serde::{Deserialize, Serialize};

use crate::align::{yaw_rotation, Sim3};
use crate::error::{Error, Result};
use crate::geometry::{Camera, TriangleMesh, Vec3};
use crate::raster::{DisparityGrid, Image, Mask, Rgb, BLACK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub camera: Camera,
    pub background: Rgb,
    pub near: f64,
}

impl RenderSettings {
    pub fn new(camera: Camera) -> Self {
        Self {
            camera,
            background: BLACK,
            near: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if !(self.near > 0.0) {
            return Err(Error::InvalidArgument(format!("near plane must be positive, got {}", self.near)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub image: Image,
    pub disparity: DisparityGrid,
    pub mask: Mask,
}

/// Accumulates several posed meshes into one z-buffer and records which
/// draw call won each pixel.
pub struct Rasterizer {
    settings: RenderSettings,
    color: Vec<Rgb>,
    inv_z: Vec<f64>,
    ids: Vec<Option<u32>>,
}

impl Rasterizer {
    pub fn new(settings: RenderSettings) -> Result<Self> {
        settings.validate()?;
        let n = settings.camera.width * settings.camera.height;
        Ok(Self {
            settings,
            color: vec![settings.background; n],
            inv_z: vec![0.0; n],
            ids: vec![None; n],
        })
    }

    pub fn draw(&mut self, mesh: &TriangleMesh, pose: &Sim3, id: u32) {
        let cam = self.settings.camera;
        let verts: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.apply(v)).collect();
        for tri in &mesh.triangles {
            let idx = tri.map(|i| i as usize);
            let p = idx.map(|i| verts[i]);
            if p.iter().any(|q| !(q.z >= self.settings.near)) {
                continue;
            }
            let s = p.map(|q| cam.project(&q));
            let area = edge(s[0], s[1], s[2]);
            if area == 0.0 || !area.is_finite() {
                continue;
            }
            let inv = p.map(|q| 1.0 / q.z);
            let cols = idx.map(|i| mesh.vertex_color(i));

            let min_x = s.iter().map(|q| q.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let max_x = s.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max).floor().min(cam.width as f64 - 1.0);
            let min_y = s.iter().map(|q| q.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let max_y = s.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max).floor().min(cam.height as f64 - 1.0);
            if min_x > max_x || min_y > max_y {
                continue;
            }
            for y in min_y as usize..=max_y as usize {
                for x in min_x as usize..=max_x as usize {
                    let q = (x as f64, y as f64);
                    let l0 = edge(s[1], s[2], q) / area;
                    let l1 = edge(s[2], s[0], q) / area;
                    let l2 = edge(s[0], s[1], q) / area;
                    if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                        continue;
                    }
                    let iz = l0 * inv[0] + l1 * inv[1] + l2 * inv[2];
                    let k = y * cam.width + x;
                    if !(iz > self.inv_z[k]) {
                        continue;
                    }
                    let w = [l0 * inv[0] / iz, l1 * inv[1] / iz, l2 * inv[2] / iz];
                    let mut c = [0.0f32; 3];
                    for (ch, out) in c.iter_mut().enumerate() {
                        let v = w[0] * cols[0][ch] as f64 + w[1] * cols[1][ch] as f64 + w[2] * cols[2][ch] as f64;
                        *out = v.clamp(0.0, 1.0) as f32;
                    }
                    self.inv_z[k] = iz;
                    self.color[k] = c;
                    self.ids[k] = Some(id);
                }
            }
        }
    }

    /// Winning draw id per pixel, row-major.
    pub fn ids(&self) -> &[Option<u32>] {
        &self.ids
    }

    pub fn finish(self) -> Rendering {
        let (w, h) = self.settings.camera.dims();
        let bits: Vec<bool> = self.ids.iter().map(Option::is_some).collect();
        let values: Vec<f32> = self.inv_z.iter().map(|v| *v as f32).collect();
        Rendering {
            image: Image::new(w, h, self.color).expect("buffer sized from camera"),
            disparity: DisparityGrid::with_validity(w, h, values, bits.clone()).expect("buffer sized from camera"),
            mask: Mask::new(w, h, bits).expect("buffer sized from camera"),
        }
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Render one posed mesh: colour, disparity (1/z) and coverage.
pub fn render(mesh: &TriangleMesh, pose: &Sim3, settings: &RenderSettings) -> Result<Rendering> {
    let mut r = Rasterizer::new(*settings)?;
    r.draw(mesh, pose, 0);
    Ok(r.finish())
}

/// Per-pixel index of the nearest of several posed meshes.
pub fn render_ids(objects: &[(&TriangleMesh, Sim3)], settings: &RenderSettings) -> Result<Vec<Option<u32>>> {
    let mut r = Rasterizer::new(*settings)?;
    for (i, (mesh, pose)) in objects.iter().enumerate() {
        r.draw(mesh, pose, i as u32);
    }
    Ok(r.ids().to_vec())
}

/// Centroid and camera distance that frame the mesh's bounding sphere with a
/// 10% margin in the narrower field of view.
pub fn framing(mesh: &TriangleMesh, camera: &Camera) -> Result<(Vec3, f64)> {
    let c = mesh
        .centroid()
        .ok_or_else(|| Error::DegenerateMesh("mesh has no vertices".into()))?;
    let r = mesh.radius_about(&c);
    if !(r > 0.0) {
        return Err(Error::DegenerateMesh("zero bounding sphere".into()));
    }
    Ok((c, 1.1 * r / camera.min_half_fov().sin()))
}

/// Pose that shows the mesh turned by `rotation` about its centroid, in
/// front of the camera at the framing distance.
pub fn canonical_pose(mesh: &TriangleMesh, rotation: &nalgebra::Matrix3<f64>, camera: &Camera) -> Result<Sim3> {
    let (c, dist) = framing(mesh, camera)?;
    Ok(Sim3::from_translation(Vec3::new(0.0, 0.0, dist))
        .compose(&Sim3::from_rotation(*rotation))
        .compose(&Sim3::from_translation(-c)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepView {
    pub yaw: f64,
    pub image: Image,
    pub mask: Mask,
    pub disparity: DisparityGrid,
}

/// `count` renders at yaw `2πi/count`, orbiting the camera about the
/// vertical axis through the mesh centroid. View `i` equals the canonical
/// render of the mesh turned by `yaw_rotation(yaw_i)⁻¹`.
pub fn render_yaw_sweep(mesh: &TriangleMesh, count: usize, settings: &RenderSettings) -> Result<Vec<SweepView>> {
    if count == 0 {
        return Err(Error::InvalidArgument("yaw sweep needs at least one view".into()));
    }
    (0..count)
        .map(|i| {
            let yaw = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let pose = canonical_pose(mesh, &yaw_rotation(-yaw), &settings.camera)?;
            let r = render(mesh, &pose, settings)?;
            Ok(SweepView {
                yaw,
                image: r.image,
                mask: r.mask,
                disparity: r.disparity,
            })
        })
        .collect()
}
