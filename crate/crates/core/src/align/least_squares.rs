use nalgebra::Matrix3;

use super::Sim3;
use crate::error::{Error, Result};
use crate::geometry::{PointSet, Vec3};

/// Closed-form similarity fit minimising `Σ‖s·R·b + t − a‖²` over
/// corresponding rows of `x_b` and `x_a`, with the determinant of `R` forced
/// to +1.
pub fn sim3_least_squares(x_b: &PointSet, x_a: &PointSet) -> Result<Sim3> {
    sim3_least_squares_slices(&x_b.points, &x_a.points)
}

pub(crate) fn sim3_least_squares_slices(b: &[Vec3], a: &[Vec3]) -> Result<Sim3> {
    if b.len() != a.len() {
        return Err(Error::InvalidArgument(format!(
            "point counts differ: {} vs {}",
            b.len(),
            a.len()
        )));
    }
    let n = b.len();
    if n < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: n });
    }
    let inv_n = 1.0 / n as f64;
    let mu_b: Vec3 = b.iter().sum::<Vec3>() * inv_n;
    let mu_a: Vec3 = a.iter().sum::<Vec3>() * inv_n;

    let mut sigma = Matrix3::zeros();
    let mut var_b = 0.0;
    for (pb, pa) in b.iter().zip(a) {
        let cb = pb - mu_b;
        let ca = pa - mu_a;
        sigma += ca * cb.transpose();
        var_b += cb.norm_squared();
    }
    sigma *= inv_n;
    var_b *= inv_n;
    // coincident points leave only rounding noise in the spread
    if !(var_b > 1e-24 * (1.0 + mu_b.norm_squared())) {
        return Err(Error::DegenerateSource);
    }

    let svd = sigma.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let d = svd.singular_values;
    // the sign flip belongs on the smallest singular direction
    let smallest = (0..3).min_by(|&i, &j| d[i].total_cmp(&d[j])).unwrap();
    let mut fix = [1.0; 3];
    if (u * v_t).determinant() < 0.0 {
        fix[smallest] = -1.0;
    }
    let s_fix = Matrix3::from_diagonal(&Vec3::from(fix));
    let rotation = u * s_fix * v_t;
    let trace: f64 = (0..3).map(|i| fix[i] * d[i]).sum();
    let scale = trace / var_b;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateConfiguration(format!("fitted scale {scale} is not positive")));
    }
    let translation = mu_a - scale * (rotation * mu_b);
    Ok(Sim3 {
        scale,
        rotation,
        translation,
    })
}

/// Root-mean-square of `‖T(b) − a‖` over corresponding rows.
pub fn rms_residual(t: &Sim3, b: &[Vec3], a: &[Vec3]) -> f64 {
    if b.is_empty() {
        return 0.0;
    }
    let ss: f64 = b.iter().zip(a).map(|(pb, pa)| (t.apply(pb) - pa).norm_squared()).sum();
    (ss / b.len() as f64).sqrt()
}
