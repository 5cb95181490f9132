use nalgebra::{Matrix3, SVD};

use crate::geometry::Vector3;

const SMALL_ANGLE: f64 = 1e-8;

/// `v^`: the skew-symmetric matrix with `v^ w = v × w`.
pub fn hat(v: &Vector3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential of an axis-angle vector.
pub fn exp_so3(phi: &Vector3) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        // Second-order series; the next term is O(θ³).
        return Matrix3::identity() + k + 0.5 * k2;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Matrix3::identity() + a * k + b * k2
}

/// Closest rotation to `m` in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Matrix3::identity();
    };
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[svd.singular_values.imin()] = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&diag) * v_t
}
