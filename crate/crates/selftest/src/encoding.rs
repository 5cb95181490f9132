//! Rotary code identities against a dense oracle.

use std::time::{Duration, Instant};

use posmatch::rope::{dense_theta, encode, relative_dot, EncodingConfig, DEFAULT_BASE};
use posmatch::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{oracle, Report};

pub const TRIALS: usize = 1000;
pub const DIMS: [usize; 4] = [6, 12, 96, 528];
pub const NORM_TOL: f64 = 1e-12;
pub const ORTHO_TOL: f64 = 1e-12;
pub const RELATIVE_TOL: f64 = 1e-9;
pub const DENSE_TOL: f64 = 1e-12;
pub const TIME_LIMIT: Duration = Duration::from_secs(5);

fn unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn point(rng: &mut impl Rng) -> Point3 {
    Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))
}

/// `max |ΘᵀΘ − I|`, using that Θ is zero outside its 2×2 diagonal blocks;
/// the zero pattern is checked entry by entry first.
fn orthogonality_error(m: &nalgebra::DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for r in 0..d {
        for c in 0..d {
            if r / 2 != c / 2 {
                worst = worst.max(m[(r, c)].abs());
            }
        }
    }
    for b in (0..d).step_by(2) {
        let block = m.fixed_view::<2, 2>(b, b);
        let gram = block.transpose() * block - nalgebra::Matrix2::identity();
        worst = worst.max(gram.amax());
    }
    worst
}

#[derive(Default)]
struct Worst {
    norm: f64,
    ortho: f64,
    relative: f64,
    dense: f64,
}

pub fn run() -> Report {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut worst = Worst::default();
    let mut failures = Vec::new();
    for trial in 0..TRIALS {
        let dim = DIMS[trial % DIMS.len()];
        let cfg = EncodingConfig::new(dim).expect("valid dimension");
        let (p, q) = (point(&mut rng), point(&mut rng));
        let (x, y) = (unit_vector(dim, &mut rng), unit_vector(dim, &mut rng));

        let ex = encode(&p, &x, &cfg).expect("encode");
        let norm_err = (ex.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs();

        let dense = dense_theta(&p, &cfg).expect("dense theta");
        let ortho_err = orthogonality_error(&dense);

        // Library and oracle forms of Θ(p) x, plus the library dense matrix.
        let reference = oracle::theta(&p, dim, DEFAULT_BASE) * nalgebra::DVector::from_column_slice(&x);
        let from_dense = &dense * nalgebra::DVector::from_column_slice(&x);
        let dense_err = ex
            .iter()
            .zip(reference.iter().zip(from_dense.iter()))
            .map(|(a, (b, c))| (a - b).abs().max((a - c).abs()))
            .fold(0.0, f64::max);

        let lhs = relative_dot(&x, &p, &y, &q, &cfg).expect("relative dot");
        let rhs = oracle::rotated_dot(&x, &(q - p), &y, DEFAULT_BASE);
        // Unit inputs: ‖x‖‖y‖ = 1 sets the scale.
        let rel_err = (lhs - rhs).abs();

        worst.norm = worst.norm.max(norm_err);
        worst.ortho = worst.ortho.max(ortho_err);
        worst.dense = worst.dense.max(dense_err);
        worst.relative = worst.relative.max(rel_err);
        for (name, err, tol) in [
            ("norm", norm_err, NORM_TOL),
            ("orthogonality", ortho_err, ORTHO_TOL),
            ("relative identity", rel_err, RELATIVE_TOL),
            ("sparse vs dense", dense_err, DENSE_TOL),
        ] {
            if !(err < tol) {
                failures.push(format!("trial {trial} (d={dim}): {name} error {err:.3e}"));
            }
        }
    }
    Report::new(
        1,
        "rotary encoding identities",
        start.elapsed(),
        TIME_LIMIT,
        failures,
        format!(
            "max errors: norm {:.1e}, orthogonality {:.1e}, relative {:.1e}, dense {:.1e}",
            worst.norm, worst.ortho, worst.relative, worst.dense
        ),
    )
}
