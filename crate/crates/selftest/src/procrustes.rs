//! Weighted Kabsch: construct-and-recover and random-search optimality.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use posmatch::procrustes::{fit_weighted, ProcrustesVariant};
use posmatch::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{oracle, Report};

pub const EXACT_PAIRS: usize = 500;
pub const ROTATION_TOL: f64 = 1e-8;
pub const TRANSLATION_TOL: f64 = 1e-9;
pub const NOISY_PAIRS: usize = 20;
pub const CANDIDATES: usize = 100_000;
pub const NOISE_SIGMA: f64 = 0.01;
pub const MARGIN: f64 = -1e-9;
pub const TIME_LIMIT: Duration = Duration::from_secs(60);

fn cloud(n: usize, rng: &mut impl Rng) -> Vec<Point3> {
    (0..n)
        .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn translation(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
}

/// Weighted cross-covariance of centered points, `Σ w s̃ t̃ᵀ`, with
/// weights normalized to sum one. For a rotation R with its best
/// translation the cost is `const − 2 tr(R M)`.
fn cross_covariance(pairs: &[(f64, Point3, Point3)]) -> Matrix3<f64> {
    let total: f64 = pairs.iter().map(|(w, _, _)| w).sum();
    let mut ms = Vector3::zeros();
    let mut mt = Vector3::zeros();
    for (w, s, t) in pairs {
        ms += w / total * s.coords;
        mt += w / total * t.coords;
    }
    let mut m = Matrix3::zeros();
    for (w, s, t) in pairs {
        m += w / total * (s.coords - ms) * (t.coords - mt).transpose();
    }
    m
}

fn direct_cost(pairs: &[(f64, Point3, Point3)], r: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
    let total: f64 = pairs.iter().map(|(w, _, _)| w).sum();
    pairs.iter().map(|(w, s, q)| w / total * (oracle::apply(r, t, s) - q).norm_squared()).sum()
}

fn best_translation(pairs: &[(f64, Point3, Point3)], r: &Matrix3<f64>) -> Vector3<f64> {
    let total: f64 = pairs.iter().map(|(w, _, _)| w).sum();
    pairs.iter().map(|(w, s, q)| w / total * (q.coords - r * s.coords)).sum()
}

fn exact_trials(rng: &mut ChaCha8Rng, failures: &mut Vec<String>) -> (f64, f64) {
    let (mut worst_r, mut worst_t): (f64, f64) = (0.0, 0.0);
    for trial in 0..EXACT_PAIRS {
        let n = rng.random_range(10..=500);
        let r0 = oracle::random_rotation(rng);
        let t0 = translation(rng);
        let pairs: Vec<(f64, Point3, Point3)> = cloud(n, rng)
            .into_iter()
            .map(|s| (rng.random_range(0.1..1.0), s, oracle::apply(&r0, &t0, &s)))
            .collect();
        match fit_weighted(&pairs, ProcrustesVariant::Kabsch) {
            Ok(fit) => {
                let dr = oracle::rotation_angle(&fit.rotation, &r0);
                let dt = (fit.translation - t0).norm();
                worst_r = worst_r.max(dr);
                worst_t = worst_t.max(dt);
                if !(dr < ROTATION_TOL && dt < TRANSLATION_TOL) {
                    failures.push(format!("exact trial {trial} ({n} points): rotation {dr:.2e}, translation {dt:.2e}"));
                }
            }
            Err(e) => failures.push(format!("exact trial {trial}: {e}")),
        }
    }
    (worst_r, worst_t)
}

/// Smallest `cost(candidate) − cost(fit)` over the candidates.
fn noisy_trials(rng: &mut ChaCha8Rng, failures: &mut Vec<String>) -> f64 {
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut worst = f64::INFINITY;
    for trial in 0..NOISY_PAIRS {
        let n = rng.random_range(10..=500);
        let r0 = oracle::random_rotation(rng);
        let t0 = translation(rng);
        let pairs: Vec<(f64, Point3, Point3)> = cloud(n, rng)
            .into_iter()
            .map(|s| {
                let q = oracle::apply(&r0, &t0, &s)
                    + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
                (rng.random_range(0.1..1.0), s, q)
            })
            .collect();
        let fit = match fit_weighted(&pairs, ProcrustesVariant::Kabsch) {
            Ok(f) => f,
            Err(e) => {
                failures.push(format!("noisy trial {trial}: {e}"));
                continue;
            }
        };
        // The fitted translation must be the optimal one for its rotation.
        let fit_cost = direct_cost(&pairs, &fit.rotation, &fit.translation);
        let reference = direct_cost(&pairs, &fit.rotation, &best_translation(&pairs, &fit.rotation));
        if fit_cost - reference > 1e-12 {
            failures.push(format!("noisy trial {trial}: translation not optimal by {:.2e}", fit_cost - reference));
        }
        let m = cross_covariance(&pairs);
        let mut trial_worst = f64::INFINITY;
        for c in 0..CANDIDATES {
            let r = if c % 2 == 0 {
                oracle::random_rotation(rng)
            } else {
                let scale = 10f64.powf(rng.random_range(-7.0..-1.0));
                let axis = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                oracle::exp(&(scale * axis)) * fit.rotation
            };
            // cost(r) − cost(fit) = 2 tr((R_fit − r) M), no cancellation.
            let margin = 2.0 * ((fit.rotation - r) * m).trace();
            trial_worst = trial_worst.min(margin);
            if c < 100 {
                let direct = direct_cost(&pairs, &r, &best_translation(&pairs, &r)) - reference;
                if (direct - margin).abs() > 1e-9 {
                    failures.push(format!("noisy trial {trial}: closed-form cost off by {:.2e}", direct - margin));
                }
            }
        }
        if trial_worst < MARGIN {
            failures.push(format!("noisy trial {trial}: a candidate beats the fit by {:.2e}", -trial_worst));
        }
        worst = worst.min(trial_worst);
    }
    worst
}

pub fn run() -> Report {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut failures = Vec::new();
    let (wr, wt) = exact_trials(&mut rng, &mut failures);
    let margin = noisy_trials(&mut rng, &mut failures);
    Report::new(
        2,
        "procrustes construct-and-recover",
        start.elapsed(),
        TIME_LIMIT,
        failures,
        format!("max rotation error {wr:.1e} rad, translation {wt:.1e} m, smallest candidate margin {margin:.1e}"),
    )
}
