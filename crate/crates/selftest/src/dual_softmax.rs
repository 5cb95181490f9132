//! Dual-softmax confidence bounds and mutual-nearest selection.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use posmatch::matching::{dual_softmax, select_matches, MatchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{oracle, Report};

pub const MATRICES: usize = 1000;
pub const FACTOR_TOL: f64 = 1e-12;
pub const TIME_LIMIT: Duration = Duration::from_secs(60);

fn scores(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, m) = (rng.random_range(1..=40), rng.random_range(1..=40));
    let scale = 10f64.powf(rng.random_range(-2.0..3.0));
    if rng.random_bool(0.2) {
        // Coarse integer scores produce ties.
        DMatrix::from_fn(n, m, |_, _| rng.random_range(0..4) as f64)
    } else {
        DMatrix::from_fn(n, m, |_, _| scale * rng.random_range(-1.0..1.0))
    }
}

/// Cells that are the first maximum of their row and of their column and
/// exceed the threshold, in row-major order.
fn mutual_reference(c: &DMatrix<f64>, theta: f64) -> Vec<(usize, usize)> {
    let first_max = |values: Vec<f64>| {
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        best
    };
    let mut out = Vec::new();
    for i in 0..c.nrows() {
        let j = first_max(c.row(i).iter().copied().collect());
        if first_max(c.column(j).iter().copied().collect()) == i && c[(i, j)] > theta {
            out.push((i, j));
        }
    }
    out
}

pub fn run() -> Report {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    let mut failures = Vec::new();
    let mut selected = 0usize;
    for trial in 0..MATRICES {
        let s = scores(&mut rng);
        let conf = dual_softmax(&s);
        let c = conf.values();
        let (Some(row), Some(col)) = (conf.row_factor(), conf.col_factor()) else {
            failures.push(format!("matrix {trial}: softmax factors missing"));
            continue;
        };
        let mut factor_err: f64 = 0.0;
        for i in 0..s.nrows() {
            let r = oracle::softmax(&s.row(i).iter().copied().collect::<Vec<_>>());
            for (j, v) in r.iter().enumerate() {
                factor_err = factor_err.max((row[(i, j)] - v).abs());
            }
        }
        for j in 0..s.ncols() {
            let k = oracle::softmax(&s.column(j).iter().copied().collect::<Vec<_>>());
            for (i, v) in k.iter().enumerate() {
                factor_err = factor_err.max((col[(i, j)] - v).abs());
            }
        }
        if factor_err > FACTOR_TOL {
            failures.push(format!("matrix {trial}: softmax factor error {factor_err:.2e}"));
        }
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                let v = c[(i, j)];
                if !(0.0..=1.0).contains(&v) || v > row[(i, j)].min(col[(i, j)]) {
                    failures.push(format!("matrix {trial}: C({i},{j}) = {v} outside bounds"));
                }
            }
        }
        let theta = rng.random_range(0.0..0.5);
        let mnn = match select_matches(&conf, &MatchConfig { theta_c: theta, use_mnn: true }) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("matrix {trial}: {e}"));
                continue;
            }
        };
        let pairs: Vec<(usize, usize)> = mnn.iter().map(|m| (m.source, m.target)).collect();
        let mut rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        if rows.len() != pairs.len() || cols.len() != pairs.len() {
            failures.push(format!("matrix {trial}: MNN selection reuses a point"));
        }
        if pairs != mutual_reference(c, theta) {
            failures.push(format!("matrix {trial}: MNN selection differs from the reference"));
        }
        selected += pairs.len();
    }
    Report::new(
        6,
        "dual-softmax invariants",
        start.elapsed(),
        TIME_LIMIT,
        failures,
        format!("{MATRICES} matrices, {selected} mutual matches checked"),
    )
}
