//! Non-rigid recovery on analytic warps and agreement with the rigid fit.

use std::time::{Duration, Instant};

use posmatch::deform::{build_graph, warp_point, GraphConfig, GraphState};
use posmatch::geometry::WarpKind;
use posmatch::nicp::{gauss_newton_solve, matches_from_set, NicpConfig};
use posmatch::procrustes::{soft_procrustes, RigidTransform};
use posmatch::synth::synth_deformable_pair;
use posmatch::{PointCloud, Result, Vector3};

use crate::Report;

pub const MEAN_ERROR_LIMIT: f64 = 1e-3;
pub const RIGID_AGREEMENT_LIMIT: f64 = 1e-4;
pub const MAX_ITERS: usize = 50;
pub const TIME_LIMIT: Duration = Duration::from_secs(120);

#[derive(Clone, Debug)]
pub struct RecoveryCase {
    pub kind: WarpKind,
    pub points: usize,
    pub magnitude: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct RecoveryOutcome {
    pub mean_error: f64,
    pub iterations: usize,
    pub monotone: bool,
    pub nodes: usize,
}

pub fn graph_config() -> GraphConfig {
    GraphConfig::default()
}

pub fn solve_case(case: &RecoveryCase, config: &NicpConfig) -> Result<RecoveryOutcome> {
    let pair = synth_deformable_pair(case.seed, case.points, case.kind, case.magnitude)?;
    let graph = build_graph(&pair.source, &graph_config())?;
    let matches = matches_from_set(&pair.correspondences, &pair.source, &pair.target)?;
    let out = gauss_newton_solve(&graph, &GraphState::identity(graph.node_count()), &matches, config)?;
    let mean_error = mean_distance(&pair.source, &pair.target, |p| warp_point(p, &graph, &out.state));
    let energies: Vec<f64> = std::iter::once(out.initial_energy).chain(out.trace.iter().map(|r| r.energy)).collect();
    Ok(RecoveryOutcome {
        mean_error,
        iterations: out.trace.len(),
        monotone: energies.windows(2).all(|w| w[1] <= w[0]),
        nodes: graph.node_count(),
    })
}

fn mean_distance(source: &PointCloud, target: &PointCloud, f: impl Fn(&posmatch::Point3) -> posmatch::Point3) -> f64 {
    source.iter().zip(target.iter()).map(|(p, q)| (f(p) - q).norm()).sum::<f64>() / source.len() as f64
}

/// Rigid target: the graph warp and the closed-form fit must agree.
pub fn rigid_agreement(seed: u64, points: usize, config: &NicpConfig) -> Result<(f64, bool)> {
    let pair = synth_deformable_pair(seed, points, WarpKind::Bend, 0.0)?;
    let motion = RigidTransform::from_axis_angle(Vector3::new(0.3, -0.5, 0.4), Vector3::new(0.1, 0.05, -0.08));
    let target = pair.source.map(|p| motion.apply(p));
    let graph = build_graph(&pair.source, &graph_config())?;
    let matches = matches_from_set(&pair.correspondences, &pair.source, &target)?;
    let out = gauss_newton_solve(&graph, &GraphState::identity(graph.node_count()), &matches, config)?;
    let fit = soft_procrustes(&pair.correspondences, &pair.source, &target)?;
    let agreement = pair
        .source
        .iter()
        .map(|p| (warp_point(p, &graph, &out.state) - fit.apply(p)).norm())
        .sum::<f64>()
        / points as f64;
    let energies: Vec<f64> = std::iter::once(out.initial_energy).chain(out.trace.iter().map(|r| r.energy)).collect();
    Ok((agreement, energies.windows(2).all(|w| w[1] <= w[0])))
}

/// Small bends and twists; the ARAP term biases the fit roughly in
/// proportion to the magnitude.
pub fn cases() -> Vec<RecoveryCase> {
    let mut out = Vec::new();
    for (i, &points) in [200, 500, 1000].iter().enumerate() {
        for (j, kind) in [WarpKind::Bend, WarpKind::Twist].into_iter().enumerate() {
            out.push(RecoveryCase { kind, points, magnitude: 0.1, seed: (2 * i + j) as u64 + 1 });
        }
    }
    out
}

pub fn run() -> Report {
    let start = Instant::now();
    let config = NicpConfig { max_iters: MAX_ITERS, ..NicpConfig::default() };
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for case in cases() {
        match solve_case(&case, &config) {
            Ok(o) => {
                worst = worst.max(o.mean_error);
                if o.mean_error >= MEAN_ERROR_LIMIT || !o.monotone {
                    failures.push(format!("{case:?}: mean error {:.3e}, monotone {}", o.mean_error, o.monotone));
                }
            }
            Err(e) => failures.push(format!("{case:?}: {e}")),
        }
    }
    let mut rigid_worst: f64 = 0.0;
    for seed in 0..2 {
        match rigid_agreement(100 + seed, 400, &config) {
            Ok((a, monotone)) => {
                rigid_worst = rigid_worst.max(a);
                if a >= RIGID_AGREEMENT_LIMIT || !monotone {
                    failures.push(format!("rigid seed {seed}: discrepancy {a:.3e}, monotone {monotone}"));
                }
            }
            Err(e) => failures.push(format!("rigid seed {seed}: {e}")),
        }
    }
    Report::new(
        4,
        "non-rigid recovery",
        start.elapsed(),
        TIME_LIMIT,
        failures,
        format!("worst mean warp error {worst:.2e} m, rigid discrepancy {rigid_worst:.2e} m"),
    )
}
