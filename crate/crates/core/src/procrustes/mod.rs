//! Confidence-weighted rigid fitting and source repositioning.

mod transform;

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};

pub use transform::{rotation_angle, RigidTransform};

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, Point3, PointCloud, Vector3};

/// Ratio `σ₂ / σ₁` of the centered cross-covariance below which the fit is
/// treated as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcrustesVariant {
    /// Weighted Kabsch: centered covariance, `R = V diag(1,1,det(VUᵀ)) Uᵀ`,
    /// `t = μ_T − R μ_S`.
    #[default]
    Kabsch,
    /// Uncentered covariance with `R = U diag(1,1,det(UVᵀ)) V` and
    /// `t = (Σ S_i − R Σ T_j) / |K|`, kept for comparison only. It does not
    /// minimize the alignment cost in general.
    Uncentered,
}

/// Weighted Kabsch fit minimizing `Σ w ‖R s + t − q‖²`.
///
/// Weights are taken from the correspondence confidences and normalized
/// internally, so any positive rescaling gives the same transform.
pub fn soft_procrustes(
    matches: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
) -> Result<RigidTransform> {
    soft_procrustes_with(matches, source, target, ProcrustesVariant::Kabsch)
}

pub fn soft_procrustes_with(
    matches: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
    variant: ProcrustesVariant,
) -> Result<RigidTransform> {
    if matches.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            got: matches.len(),
        });
    }
    matches.validate(source.len(), target.len())?;
    let weighted: Vec<(f64, Point3, Point3)> = matches
        .iter()
        .map(|c| (c.confidence, source[c.source], target[c.target]))
        .collect();
    fit_weighted(&weighted, variant)
}

/// Fit from explicit `(weight, source point, target point)` triples.
pub fn fit_weighted(
    pairs: &[(f64, Point3, Point3)],
    variant: ProcrustesVariant,
) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            got: pairs.len(),
        });
    }
    if pairs.iter().any(|(w, _, _)| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter(
            "procrustes weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = pairs.iter().map(|(w, _, _)| w).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateConfiguration);
    }
    match variant {
        ProcrustesVariant::Kabsch => kabsch(pairs, total),
        ProcrustesVariant::Uncentered => uncentered(pairs, total),
    }
}

fn kabsch(pairs: &[(f64, Point3, Point3)], total: f64) -> Result<RigidTransform> {
    let mut mu_s = Vector3::zeros();
    let mut mu_t = Vector3::zeros();
    for (w, s, t) in pairs {
        let w = w / total;
        mu_s += w * s.coords;
        mu_t += w * t.coords;
    }
    let mut h = Matrix3::zeros();
    for (w, s, t) in pairs {
        let w = w / total;
        h += w * (s.coords - mu_s) * (t.coords - mu_t).transpose();
    }
    let svd = SVD::new(h, true, true);
    let sv = svd.singular_values;
    let (s_max, s_mid) = (sv.max(), median3(sv[0], sv[1], sv[2]));
    if !(s_max > 0.0) || s_mid <= RANK_TOLERANCE * s_max {
        return Err(Error::DegenerateConfiguration);
    }
    let u = svd.u.ok_or(Error::DegenerateConfiguration)?;
    let v = svd.v_t.ok_or(Error::DegenerateConfiguration)?.transpose();
    // Singular values come unordered; the sign fix goes on the smallest.
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[sv.imin()] = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&diag) * u.transpose();
    let translation = mu_t - rotation * mu_s;
    Ok(RigidTransform::new(rotation, translation))
}

fn uncentered(pairs: &[(f64, Point3, Point3)], total: f64) -> Result<RigidTransform> {
    let mut h = Matrix3::zeros();
    let mut sum_s = Vector3::zeros();
    let mut sum_t = Vector3::zeros();
    for (w, s, t) in pairs {
        h += (w / total) * s.coords * t.coords.transpose();
        sum_s += s.coords;
        sum_t += t.coords;
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.ok_or(Error::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let v = v_t.transpose();
    let d = (u * v_t).determinant().signum();
    let imin = svd.singular_values.imin();
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[imin] = d;
    let rotation = u * Matrix3::from_diagonal(&diag) * v;
    let translation = (sum_s - rotation * sum_t) / pairs.len() as f64;
    Ok(RigidTransform::new(rotation, translation))
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Replaces every source position by `R p + t`. Features are untouched;
/// only the positions feeding the encoding move.
pub fn reposition(positions: &PointCloud, transform: &RigidTransform) -> PointCloud {
    positions.map(|p| transform.apply(p))
}

/// Weighted alignment cost `Σ w ‖R s + t − q‖²` of a transform.
pub fn weighted_cost(pairs: &[(f64, Point3, Point3)], transform: &RigidTransform) -> f64 {
    pairs
        .iter()
        .map(|(w, s, t)| w * (transform.apply(s) - t).norm_squared())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Correspondence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::from(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect::<Vec<_>>(),
        )
    }

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        )
        .normalize();
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        RigidTransform::from_axis_angle(
            axis * angle,
            Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
        )
    }

    #[test]
    fn identical_clouds_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_cloud(&mut rng, 20);
        let fit = soft_procrustes(&CorrespondenceSet::identity(20), &s, &s).unwrap();
        assert!((fit.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(fit.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(3..60);
            let s = random_cloud(&mut rng, n);
            let gt = random_transform(&mut rng);
            let t = s.map(|p| gt.apply(p));
            let fit = soft_procrustes(&CorrespondenceSet::identity(n), &s, &t).unwrap();
            assert!(fit.rotation_angle_to(&gt) < 1e-8);
            assert!(fit.translation_distance_to(&gt) < 1e-9);
            assert!(fit.is_proper(1e-10));
        }
    }

    #[test]
    fn planar_input_still_gives_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_cloud(&mut rng, 30).map(|p| Point3::new(p.x, p.y, 0.0));
        let gt = random_transform(&mut rng);
        let t = s.map(|p| gt.apply(p));
        let fit = soft_procrustes(&CorrespondenceSet::identity(30), &s, &t).unwrap();
        assert!(fit.is_proper(1e-10));
        assert!(fit.rotation_angle_to(&gt) < 1e-8);
    }

    #[test]
    fn reflection_prone_noise_keeps_det_positive() {
        // Nearly planar clouds whose best orthogonal fit is a reflection.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let s = random_cloud(&mut rng, 10).map(|p| Point3::new(p.x, p.y, 1e-3 * p.z));
            let t = s.map(|p| Point3::new(p.x, p.y, -p.z));
            let fit = soft_procrustes(&CorrespondenceSet::identity(10), &s, &t).unwrap();
            assert!(fit.is_proper(1e-10));
        }
    }

    #[test]
    fn too_few_or_collinear_is_an_error() {
        let s = PointCloud::from(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]);
        assert!(matches!(
            soft_procrustes(&CorrespondenceSet::identity(2), &s, &s),
            Err(Error::TooFewCorrespondences { .. })
        ));
        let line = PointCloud::from(
            (0..5).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect::<Vec<_>>(),
        );
        let err = soft_procrustes(&CorrespondenceSet::identity(5), &line, &line).unwrap_err();
        assert_eq!(err.to_string(), "degenerate configuration");
    }

    #[test]
    fn weight_scaling_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_cloud(&mut rng, 25);
        let gt = random_transform(&mut rng);
        let t = s.map(|p| {
            gt.apply(p) + Vector3::new(
                0.05 * rng.random_range(-1.0..1.0),
                0.05 * rng.random_range(-1.0..1.0),
                0.05 * rng.random_range(-1.0..1.0),
            )
        });
        let weights: Vec<f64> = (0..25).map(|_| rng.random_range(0.1..1.0)).collect();
        let k = |scale: f64| -> CorrespondenceSet {
            (0..25)
                .map(|i| Correspondence::new(i, i, weights[i] * scale))
                .collect()
        };
        let a = soft_procrustes(&k(1.0), &s, &t).unwrap();
        let b = soft_procrustes(&k(37.5), &s, &t).unwrap();
        assert!((a.rotation - b.rotation).amax() < 1e-10);
        assert!((a.translation - b.translation).amax() < 1e-10);
    }

    #[test]
    fn equivariant_under_common_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_cloud(&mut rng, 40);
        let gt = random_transform(&mut rng);
        let t = s.map(|p| {
            gt.apply(p) + 0.02 * Vector3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        });
        let q = random_transform(&mut rng).rotation;
        let k = CorrespondenceSet::identity(40);
        let fit = soft_procrustes(&k, &s, &t).unwrap();
        let rs = s.map(|p| Point3::from(q * p.coords));
        let rt = t.map(|p| Point3::from(q * p.coords));
        let fit_q = soft_procrustes(&k, &rs, &rt).unwrap();
        assert!((fit_q.rotation - q * fit.rotation * q.transpose()).amax() < 1e-8);
        assert!((fit_q.translation - q * fit.translation).amax() < 1e-8);
    }

    #[test]
    fn reposition_then_refit_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_cloud(&mut rng, 30);
        let gt = random_transform(&mut rng);
        let t = s.map(|p| gt.apply(p));
        let k = CorrespondenceSet::identity(30);
        let fit = soft_procrustes(&k, &s, &t).unwrap();
        let moved = reposition(&s, &fit);
        for (a, b) in moved.iter().zip(t.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let again = soft_procrustes(&k, &moved, &t).unwrap();
        assert!(again.rotation_angle_to(&RigidTransform::identity()) < 1e-8);
        assert!(again.translation.norm() < 1e-8);
    }

    #[test]
    fn identity_reposition_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_cloud(&mut rng, 5);
        assert_eq!(reposition(&s, &RigidTransform::identity()), s);
    }

    #[test]
    fn uncentered_variant_is_a_rotation_but_not_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_cloud(&mut rng, 30);
        let gt = random_transform(&mut rng);
        let t = s.map(|p| gt.apply(p));
        let k = CorrespondenceSet::identity(30);
        let lit = soft_procrustes_with(&k, &s, &t, ProcrustesVariant::Uncentered).unwrap();
        assert!(lit.is_proper(1e-10));
        let pairs: Vec<_> = (0..30).map(|i| (1.0, s[i], t[i])).collect();
        let kab = soft_procrustes(&k, &s, &t).unwrap();
        assert!(weighted_cost(&pairs, &kab) <= weighted_cost(&pairs, &lit));
    }
}
