//! SO(3) helpers: quaternion → matrix, exponential and logarithm maps, and
//! the inverse right Jacobian used to linearize log-rotation residuals.

use std::f64::consts::PI;

use nalgebra::{Matrix3, UnitQuaternion};

use crate::geometry::Vec3;

pub type Quat = UnitQuaternion<f64>;

pub fn quat_to_matrix(q: &Quat) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn rotation_exp(phi: &Vec3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-8 {
        return Matrix3::identity() + k + k * k * 0.5;
    }
    Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / (theta * theta))
}

/// Axis-angle vector of a proper rotation, angle in `[0, π]`.
///
/// Near π the axis comes from the symmetric part of `R`, which stays well
/// conditioned where `sin θ` vanishes.
pub fn rotation_log(r: &Matrix3<f64>) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        // θ/(2 sin θ) ≈ ½ (1 + θ²/6)
        return vee * (0.5 * (1.0 + theta * theta / 6.0));
    }
    if PI - theta > 1e-3 {
        return vee * (theta / (2.0 * theta.sin()));
    }
    // (R + Rᵀ)/2 = cos θ I + (1 - cos θ) n nᵀ
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let k = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vec3 = sym.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Logarithm of a unit quaternion as an axis-angle vector with angle in `[0, π]`.
pub fn quat_log(q: &Quat) -> Vec3 {
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s < 1e-12 {
        return v * 2.0;
    }
    v * (2.0 * s.atan2(w) / s)
}

pub fn quat_exp(phi: &Vec3) -> Quat {
    Quat::from_scaled_axis(*phi)
}

/// Inverse of the right Jacobian of SO(3):
/// `log(exp(φ) exp(ε)) ≈ φ + J_r⁻¹(φ) ε`.
pub fn right_jacobian_inv(phi: &Vec3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let c = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Truncated power series of the matrix exponential (independent of Rodrigues).
    fn series_exp(phi: &Vec3) -> Matrix3<f64> {
        let a = skew(phi);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for k in 1..60 {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    fn random_quat(a: f64, b: f64, c: f64, d: f64) -> Quat {
        Quat::from_quaternion(nalgebra::Quaternion::new(a, b, c, d))
    }

    #[test]
    fn identity_quaternion() {
        assert_eq!(quat_to_matrix(&Quat::identity()), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = Quat::from_axis_angle(&Vec3::z_axis(), PI / 2.0);
        assert_relative_eq!(quat_to_matrix(&q) * Vec3::x(), Vec3::y(), epsilon = 1e-15);
        let log = rotation_log(&quat_to_matrix(&q));
        assert_relative_eq!(log, Vec3::new(0.0, 0.0, PI / 2.0), epsilon = 1e-12);
        assert_relative_eq!(log.norm(), PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn log_of_identity() {
        assert_eq!(rotation_log(&Matrix3::identity()), Vec3::zeros());
    }

    #[test]
    fn log_at_pi_is_finite() {
        for axis in [Vec3::x(), Vec3::new(1.0, 2.0, -0.5).normalize(), Vec3::z()] {
            let r = rotation_exp(&(axis * PI));
            let log = rotation_log(&r);
            assert!(log.iter().all(|c| c.is_finite()));
            assert_relative_eq!(log.norm(), PI, epsilon = 1e-9);
            assert_relative_eq!(rotation_exp(&log), r, epsilon = 1e-9);
        }
    }

    #[test]
    fn right_jacobian_inverse_matches_finite_differences() {
        let phi = Vec3::new(0.4, -1.1, 0.7);
        let jinv = right_jacobian_inv(&phi);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let plus = rotation_log(&(rotation_exp(&phi) * rotation_exp(&e)));
            let minus = rotation_log(&(rotation_exp(&phi) * rotation_exp(&-e)));
            let fd = (plus - minus) / (2.0 * h);
            assert_relative_eq!(fd, jinv.column(k).into_owned(), epsilon = 1e-7);
        }
    }

    proptest! {
        #[test]
        fn quat_matrix_is_proper_rotation(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in -1.0..1.0f64) {
            prop_assume!(a * a + b * b + c * c + d * d > 1e-3);
            let r = quat_to_matrix(&random_quat(a, b, c, d));
            prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn log_inverts_series_exponential(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in -1.0..1.0f64) {
            prop_assume!(a * a + b * b + c * c + d * d > 1e-3);
            let r = quat_to_matrix(&random_quat(a, b, c, d));
            let log = rotation_log(&r);
            prop_assert!(log.norm() <= PI + 1e-12);
            prop_assert!((series_exp(&log) - r).abs().max() < 1e-8);
        }

        #[test]
        fn quat_log_agrees_with_matrix_log(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in -1.0..1.0f64) {
            prop_assume!(a * a + b * b + c * c + d * d > 1e-3);
            let q = random_quat(a, b, c, d);
            let from_q = quat_log(&q);
            let from_m = rotation_log(&quat_to_matrix(&q));
            prop_assume!(PI - from_q.norm() > 1e-6);
            prop_assert!((from_q - from_m).norm() < 1e-8);
        }
    }
}
