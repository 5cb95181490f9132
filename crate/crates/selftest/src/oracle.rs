//! Reference computations written from the definitions, sharing no code
//! with the library beyond its plain data types.

use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion, Vector3};
use posmatch::{Point3, RigidTransform};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Per-block frequencies `base^(-6(k-1)/d)`, k = 1..d/6.
pub fn frequencies(dim: usize, base: f64) -> Vec<f64> {
    (0..dim / 6).map(|k| base.powf(-6.0 * k as f64 / dim as f64)).collect()
}

/// Dense Θ(p) assembled entry by entry.
pub fn theta(p: &Point3, dim: usize, base: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for (k, f) in frequencies(dim, base).into_iter().enumerate() {
        for axis in 0..3 {
            let angle = p[axis] * f;
            let r = 6 * k + 2 * axis;
            m[(r, r)] = angle.cos();
            m[(r + 1, r + 1)] = angle.cos();
            m[(r, r + 1)] = -angle.sin();
            m[(r + 1, r)] = angle.sin();
        }
    }
    m
}

/// `aᵀ Θ(δ) b` without forming Θ.
pub fn rotated_dot(a: &[f64], delta: &Vector3<f64>, b: &[f64], base: f64) -> f64 {
    let dim = a.len();
    let mut sum = 0.0;
    for (k, f) in frequencies(dim, base).into_iter().enumerate() {
        for axis in 0..3 {
            let (s, c) = (delta[axis] * f).sin_cos();
            let r = 6 * k + 2 * axis;
            // Θ b on the pair, then dotted with a.
            let rb0 = c * b[r] - s * b[r + 1];
            let rb1 = s * b[r] + c * b[r + 1];
            sum += a[r] * rb0 + a[r + 1] * rb1;
        }
    }
    sum
}

pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

/// Geodesic angle between two rotations, accurate near zero.
pub fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let d = a * b.transpose();
    let s = 0.5
        * Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm();
    let c = 0.5 * (d.trace() - 1.0);
    s.atan2(c)
}

pub fn apply(r: &Matrix3<f64>, t: &Vector3<f64>, p: &Point3) -> Point3 {
    Point3::from(r * p.coords + t)
}

pub fn apply_transform(t: &RigidTransform, p: &Point3) -> Point3 {
    apply(&t.rotation, &t.translation, p)
}

/// Rotation by the axis-angle vector `phi`.
pub fn exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*phi).into_inner()
}

/// Indices of the `k` nearest points, nearest first, by full sort.
pub fn knn(points: &[Point3], u: &Point3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, (u - p).norm())).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_of_first_block_is_plain_rotation() {
        // First block has frequency 1: x rotates channels 0,1 by p.x radians.
        let m = theta(&Point3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0), 6, 10_000.0);
        assert!((m[(0, 1)] + 1.0).abs() < 1e-15 && (m[(1, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(m[(2, 2)], 1.0);
    }

    #[test]
    fn rotated_dot_matches_dense_form() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let d = Vector3::new(0.3, -1.2, 2.0);
        let dense = theta(&Point3::from(d), 12, 10_000.0) * nalgebra::DVector::from_column_slice(&b);
        let want: f64 = a.iter().zip(dense.iter()).map(|(x, y)| x * y).sum();
        assert!((rotated_dot(&a, &d, &b, 10_000.0) - want).abs() < 1e-14);
    }

    #[test]
    fn small_rotation_angles_are_resolved() {
        let r = exp(&Vector3::new(1e-10, 0.0, 0.0));
        assert!((rotation_angle(&r, &Matrix3::identity()) - 1e-10).abs() < 1e-20);
    }
}
