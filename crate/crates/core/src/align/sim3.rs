use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{PointSet, TriangleMesh, Vec3};

const ORTHO_TOL: f64 = 1e-9;

/// Similarity transform `x -> s * R * x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Sim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let t = Self {
            scale,
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self {
            rotation: r,
            ..Self::identity()
        }
    }

    pub fn from_scale(s: f64) -> Self {
        Self {
            scale: s,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::DegenerateConfiguration(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if !(ortho < ORTHO_TOL && (det - 1.0).abs() < ORTHO_TOL) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateConfiguration(format!(
                "not a proper rotation (orthogonality error {ortho:e}, det {det})"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_points(&self, p: &PointSet) -> PointSet {
        PointSet {
            points: p.points.iter().map(|x| self.apply(x)).collect(),
            colors: p.colors.clone(),
        }
    }

    pub fn apply_mesh(&self, m: &TriangleMesh) -> TriangleMesh {
        m.map_vertices(|v| self.apply(v))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let rt = self.rotation.transpose();
        let inv_s = 1.0 / self.scale;
        Sim3 {
            scale: inv_s,
            rotation: rt,
            translation: -inv_s * (rt * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        let sr = self.scale * self.rotation;
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = sr[(r, c)];
            }
            m[(r, 3)] = self.translation[r];
        }
        m
    }

    /// Inverse of [`Sim3::to_matrix`]; scale is the cube root of the block
    /// determinant.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Sim3> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::DegenerateConfiguration(format!("bottom row {bottom:?} is not (0,0,0,1)")));
        }
        let sr: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let det = sr.determinant();
        if det <= 0.0 {
            return Err(Error::DegenerateConfiguration(format!("linear block has determinant {det}")));
        }
        let scale = det.cbrt();
        // re-orthonormalize to absorb rounding from text round trips
        let svd = (sr / scale).svd(true, true);
        let rotation = svd.u.unwrap() * svd.v_t.unwrap();
        let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        Sim3::new(scale, rotation, t)
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Sim3> {
        Sim3::from_matrix(&Matrix4::from_fn(|r, c| rows[r][c]))
    }
}

/// Rotation about the vertical (+y) axis.
pub fn yaw_rotation(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), angle).into_inner()
}

/// Geodesic angle between two rotations, radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    // ‖A − B‖_F = 2√2·sin(θ/2); unlike the trace form this keeps
    // precision for small angles
    let chord = (a - b).norm() / (2.0 * std::f64::consts::SQRT_2);
    2.0 * chord.clamp(0.0, 1.0).asin()
}

impl Serialize for Sim3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Sim3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 4]; 4]>::deserialize(d)?;
        Sim3::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
