//! RANSAC rigid registration from putative correspondences.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, Point3, PointCloud};
use crate::procrustes::{fit_weighted, ProcrustesVariant, RigidTransform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// A pair is an inlier when `‖R p + t − q‖` is below this, meters.
    pub inlier_sigma: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            inlier_sigma: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacOutput {
    pub transform: RigidTransform,
    /// Indices into the input correspondence list.
    pub inliers: Vec<usize>,
}

fn count_inliers(t: &RigidTransform, pairs: &[(Point3, Point3)], sigma: f64) -> usize {
    pairs.iter().filter(|(p, q)| (t.apply(p) - q).norm() < sigma).count()
}

/// Best of `iterations` three-pair hypotheses by inlier count (first found
/// wins ties), refit on its inliers with uniform weights.
pub fn ransac_rigid(
    matches: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
    config: &RansacConfig,
    seed: u64,
) -> Result<RansacOutput> {
    if matches.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            got: matches.len(),
        });
    }
    if !(config.inlier_sigma > 0.0) || config.iterations == 0 {
        return Err(Error::InvalidParameter("ransac needs positive sigma and iterations".into()));
    }
    matches.validate(source.len(), target.len())?;
    let pairs: Vec<(Point3, Point3)> = matches.iter().map(|c| (source[c.source], target[c.target])).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, RigidTransform)> = None;
    for _ in 0..config.iterations {
        let picked = sample(&mut rng, pairs.len(), 3);
        let minimal: Vec<(f64, Point3, Point3)> = picked.iter().map(|k| (1.0, pairs[k].0, pairs[k].1)).collect();
        let Ok(hypothesis) = fit_weighted(&minimal, ProcrustesVariant::Kabsch) else {
            continue;
        };
        let count = count_inliers(&hypothesis, &pairs, config.inlier_sigma);
        if best.as_ref().is_none_or(|(b, _)| count > *b) {
            best = Some((count, hypothesis));
            if count == pairs.len() {
                break;
            }
        }
    }
    let Some((count, hypothesis)) = best else {
        return Err(Error::RegistrationFailed);
    };
    if count < 3 {
        return Err(Error::RegistrationFailed);
    }

    let inliers: Vec<usize> = (0..pairs.len())
        .filter(|&k| (hypothesis.apply(&pairs[k].0) - pairs[k].1).norm() < config.inlier_sigma)
        .collect();
    let refit: Vec<(f64, Point3, Point3)> = inliers.iter().map(|&k| (1.0, pairs[k].0, pairs[k].1)).collect();
    let transform = fit_weighted(&refit, ProcrustesVariant::Kabsch).map_err(|e| match e {
        Error::DegenerateConfiguration => Error::RegistrationFailed,
        e => e,
    })?;
    Ok(RansacOutput { transform, inliers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Correspondence, Vector3};
    use crate::procrustes::soft_procrustes;
    use rand::Rng;

    fn scene(seed: u64, n: usize) -> (PointCloud, PointCloud, RigidTransform) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<Point3> = (0..n)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)))
            .collect();
        let gt = RigidTransform::from_axis_angle(
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
        );
        let t: Vec<Point3> = s.iter().map(|p| gt.apply(p)).collect();
        (PointCloud::from(s), PointCloud::from(t), gt)
    }

    #[test]
    fn all_inliers_equals_direct_fit() {
        let (s, t, _) = scene(1, 40);
        let m = CorrespondenceSet::identity(40);
        let out = ransac_rigid(&m, &s, &t, &RansacConfig::default(), 3).unwrap();
        let direct = soft_procrustes(&m, &s, &t).unwrap();
        assert!((out.transform.rotation - direct.rotation).amax() < 1e-8);
        assert!((out.transform.translation - direct.translation).amax() < 1e-8);
        assert_eq!(out.inliers.len(), 40);
    }

    #[test]
    fn rejects_outliers() {
        let (s, t, gt) = scene(2, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: CorrespondenceSet = (0..100)
            .map(|i| {
                let j = if i < 70 { i } else { rng.random_range(0..100) };
                Correspondence::new(i, j, 1.0)
            })
            .collect();
        let out = ransac_rigid(&m, &s, &t, &RansacConfig::default(), 11).unwrap();
        assert!(out.transform.rotation_angle_to(&gt) < 1e-8);
        assert!(out.transform.translation_distance_to(&gt) < 1e-8);
    }

    #[test]
    fn seeded_runs_repeat() {
        let (s, t, _) = scene(3, 30);
        let m: CorrespondenceSet = (0..30).map(|i| Correspondence::new(i, (i * 7) % 30, 1.0)).collect();
        let cfg = RansacConfig { iterations: 200, inlier_sigma: 0.3 };
        let a = ransac_rigid(&m, &s, &t, &cfg, 4);
        let b = ransac_rigid(&m, &s, &t, &cfg, 4);
        assert_eq!(a.is_ok(), b.is_ok());
        if let (Ok(a), Ok(b)) = (a, b) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn hopeless_input_fails() {
        let s = PointCloud::from(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)]);
        let m = CorrespondenceSet::identity(3);
        assert!(matches!(
            ransac_rigid(&m, &s, &s, &RansacConfig::default(), 0),
            Err(Error::RegistrationFailed)
        ));
        assert!(ransac_rigid(&CorrespondenceSet::identity(2), &s, &s, &RansacConfig::default(), 0).is_err());
    }
}
