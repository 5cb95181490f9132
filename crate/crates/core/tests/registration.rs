use approx::assert_abs_diff_eq;
use posmatch::geometry::{Correspondence, CorrespondenceSet};
use posmatch::procrustes::{reposition, soft_procrustes};
use posmatch::ransac::{ransac_rigid, RansacConfig};
use posmatch::rope::{relative_dot, EncodingConfig};
use posmatch::synth::synth_rigid_pair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn noiseless_full_overlap_closes_the_loop() {
    let pair = synth_rigid_pair(21, 300, 1.0, 0.0).unwrap();
    let fit = soft_procrustes(&pair.correspondences, &pair.source, &pair.target).unwrap();
    assert!(fit.rotation_angle_to(&pair.transform) < 1e-8);
    assert!(fit.translation_distance_to(&pair.transform) < 1e-9);
}

#[test]
fn overlap_target_is_met() {
    for seed in 0..5 {
        let pair = synth_rigid_pair(seed, 400, 0.3, 0.0).unwrap();
        assert!((0.25..=0.35).contains(&pair.overlap_ratio), "{}", pair.overlap_ratio);
    }
}

#[test]
fn repositioning_with_truth_cancels_relative_phase() {
    let pair = synth_rigid_pair(4, 200, 0.6, 0.0).unwrap();
    let moved = reposition(&pair.source, &pair.transform);
    let cfg = EncodingConfig::new(48).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for c in pair.correspondences.iter().take(20) {
        let x: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let plain: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let encoded = relative_dot(&x, &moved[c.source], &y, &pair.target[c.target], &cfg).unwrap();
        assert_abs_diff_eq!(encoded, plain, epsilon = 1e-9);
    }
}

/// 70% exact inliers and 30% random pairs.
fn contaminated(seed: u64) -> (posmatch::synth::RigidPair, CorrespondenceSet) {
    let pair = synth_rigid_pair(seed, 300, 1.0, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let matches = pair
        .correspondences
        .iter()
        .map(|c| {
            if rng.random_bool(0.7) {
                *c
            } else {
                Correspondence::new(c.source, rng.random_range(0..pair.target.len()), 1.0)
            }
        })
        .collect();
    (pair, matches)
}

#[test]
fn ransac_rejects_thirty_percent_outliers() {
    let config = RansacConfig { iterations: 500, ..RansacConfig::default() };
    let mut recovered = 0;
    for seed in 0..100 {
        let (pair, matches) = contaminated(seed);
        let out = ransac_rigid(&matches, &pair.source, &pair.target, &config, seed).unwrap();
        if out.transform.rotation_angle_to(&pair.transform) < 1f64.to_radians()
            && out.transform.translation_distance_to(&pair.transform) < 0.01
        {
            recovered += 1;
        }
    }
    assert!(recovered >= 99, "{recovered}/100");
}

#[test]
fn ransac_on_clean_matches_equals_direct_fit() {
    let pair = synth_rigid_pair(8, 200, 0.5, 0.0).unwrap();
    let out = ransac_rigid(&pair.correspondences, &pair.source, &pair.target, &RansacConfig::default(), 3).unwrap();
    let direct = soft_procrustes(&pair.correspondences, &pair.source, &pair.target).unwrap();
    assert!(out.transform.rotation_angle_to(&direct) < 1e-8);
    assert!(out.transform.translation_distance_to(&direct) < 1e-8);
    assert_eq!(out.inliers.len(), pair.correspondences.len());
}

#[test]
fn ransac_is_deterministic_per_seed() {
    let (pair, matches) = contaminated(5);
    let cfg = RansacConfig::default();
    let a = ransac_rigid(&matches, &pair.source, &pair.target, &cfg, 42).unwrap();
    let b = ransac_rigid(&matches, &pair.source, &pair.target, &cfg, 42).unwrap();
    assert_eq!(a, b);
}
