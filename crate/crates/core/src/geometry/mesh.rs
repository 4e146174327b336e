use std::f64::consts::PI;

use super::{Aabb, Vec3};
use crate::error::{Error, Result};
use crate::raster::Rgb;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub colors: Option<Vec<Rgb>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, colors: Option<Vec<Rgb>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            colors,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::DegenerateMesh(format!(
                    "{} colors for {n} vertices",
                    c.len()
                )));
            }
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::DegenerateMesh("non-finite vertex".into()));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= n) {
                return Err(Error::DegenerateMesh(format!("triangle {t} index out of range")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateMesh(format!("triangle {t} repeats an index")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Axis-aligned box centred at the origin.
    pub fn cuboid(half: Vec3, color: Rgb) -> Self {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            vertices.push(Vec3::new(
                if i & 1 == 0 { -half.x } else { half.x },
                if i & 2 == 0 { -half.y } else { half.y },
                if i & 4 == 0 { -half.z } else { half.z },
            ));
        }
        // outward-facing, counter-clockwise seen from outside
        let triangles = vec![
            [0, 4, 6], [0, 6, 2], // -x
            [1, 3, 7], [1, 7, 5], // +x
            [0, 1, 5], [0, 5, 4], // -y
            [2, 6, 7], [2, 7, 3], // +y
            [0, 2, 3], [0, 3, 1], // -z
            [4, 5, 7], [4, 7, 6], // +z
        ];
        let colors = vertices.iter().map(|v| shade(color, v.y / half.y.max(1e-12))).collect();
        Self {
            vertices,
            colors: Some(colors),
            triangles,
        }
    }

    /// Latitude/longitude sphere centred at the origin, wound like `cuboid`.
    pub fn uv_sphere(radius: f64, segments: usize, rings: usize, color: Rgb) -> Self {
        let segments = segments.max(3);
        let rings = rings.max(2);
        let mut vertices = vec![Vec3::new(0.0, -radius, 0.0)];
        for r in 1..rings {
            let phi = PI * r as f64 / rings as f64;
            for s in 0..segments {
                let theta = 2.0 * PI * s as f64 / segments as f64;
                vertices.push(Vec3::new(
                    radius * phi.sin() * theta.cos(),
                    -radius * phi.cos(),
                    radius * phi.sin() * theta.sin(),
                ));
            }
        }
        vertices.push(Vec3::new(0.0, radius, 0.0));
        let bottom = vertices.len() as u32 - 1;
        let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
        let mut triangles = Vec::new();
        for s in 0..segments {
            triangles.push([0, ring(1, s), ring(1, s + 1)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
                triangles.push([a, d, b]);
                triangles.push([a, c, d]);
            }
        }
        for s in 0..segments {
            triangles.push([bottom, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        }
        let colors = vertices.iter().map(|v| shade(color, v.y / radius)).collect();
        Self {
            vertices,
            colors: Some(colors),
            triangles,
        }
    }

    /// Closed cylinder about the y axis, centred at the origin.
    pub fn cylinder(radius: f64, half_height: f64, segments: usize, color: Rgb) -> Self {
        let segments = segments.max(3);
        let mut vertices = Vec::with_capacity(2 * segments + 2);
        for y in [-half_height, half_height] {
            for s in 0..segments {
                let theta = 2.0 * PI * s as f64 / segments as f64;
                vertices.push(Vec3::new(radius * theta.cos(), y, radius * theta.sin()));
            }
        }
        let (top, bottom) = (2 * segments as u32, 2 * segments as u32 + 1);
        vertices.push(Vec3::new(0.0, -half_height, 0.0));
        vertices.push(Vec3::new(0.0, half_height, 0.0));
        let n = segments as u32;
        let mut triangles = Vec::with_capacity(4 * segments);
        for s in 0..n {
            let t = (s + 1) % n;
            triangles.push([s, n + t, t]);
            triangles.push([s, n + s, n + t]);
            triangles.push([top, s, t]);
            triangles.push([bottom, n + t, n + s]);
        }
        let colors = vertices.iter().map(|v| shade(color, v.y / half_height.max(1e-12))).collect();
        Self {
            vertices,
            colors: Some(colors),
            triangles,
        }
    }

    /// Planar rectangle spanned by `u` and `v` around `center` (two triangles).
    pub fn quad(center: Vec3, u: Vec3, v: Vec3, color: Rgb) -> Self {
        let vertices = vec![center - u - v, center + u - v, center + u + v, center - u + v];
        Self {
            vertices,
            colors: Some(vec![color; 4]),
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    pub fn with_color(mut self, color: Rgb) -> Self {
        self.colors = Some(vec![color; self.vertices.len()]);
        self
    }

    /// Append another mesh, returning the index of its first triangle.
    pub fn append(&mut self, other: &TriangleMesh) -> usize {
        let base = self.vertices.len() as u32;
        let first = self.triangles.len();
        let own_colors = self.colors.take();
        let colors = match (own_colors, &other.colors) {
            (None, None) => None,
            (a, b) => {
                let mut c = a.unwrap_or_else(|| vec![[0.5; 3]; self.vertices.len()]);
                c.extend(b.clone().unwrap_or_else(|| vec![[0.5; 3]; other.vertices.len()]));
                Some(c)
            }
        };
        self.colors = colors;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
        first
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(f).collect(),
            colors: self.colors.clone(),
            triangles: self.triangles.clone(),
        }
    }

    /// Mean of the vertex positions.
    pub fn centroid(&self) -> Option<Vec3> {
        if self.vertices.is_empty() {
            return None;
        }
        Some(self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64)
    }

    /// Largest vertex distance from `center`.
    pub fn radius_about(&self, center: &Vec3) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v - center).norm())
            .fold(0.0, f64::max)
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Euclidean distance from `p` to the nearest point of any triangle.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        (0..self.triangles.len())
            .map(|t| point_triangle_distance(p, &self.triangle(t)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn vertex_color(&self, i: usize) -> Rgb {
        self.colors.as_ref().map_or([0.7; 3], |c| c[i])
    }
}

/// Closest-point distance from `p` to triangle `t` (Voronoi-region walk).
pub fn point_triangle_distance(p: &Vec3, t: &[Vec3; 3]) -> f64 {
    let [a, b, c] = *t;
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + v * ab)).norm();
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + w * ac)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + w * (c - b))).norm();
    }
    let denom = va + vb + vc;
    if denom == 0.0 {
        // degenerate triangle: fall back to its edges
        return [(a, b), (b, c), (c, a)]
            .iter()
            .map(|(u, v)| {
                let d = v - u;
                let len2 = d.norm_squared();
                let s = if len2 > 0.0 { ((p - u).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
                (p - (u + s * d)).norm()
            })
            .fold(f64::INFINITY, f64::min);
    }
    let (v, w) = (vb / denom, vc / denom);
    (p - (a + v * ab + w * ac)).norm()
}

/// Darken toward the bottom (+y is down) so renders have some shading.
fn shade(color: Rgb, t: f64) -> Rgb {
    let k = (1.0 - 0.15 * t.clamp(-1.0, 1.0)) as f32 * 0.87;
    color.map(|c| (c * k).clamp(0.0, 1.0))
}
