//! Analytic N-ICP Jacobian against central finite differences of an
//! independently written residual.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use posmatch::deform::{DeformationGraph, GraphState};
use posmatch::nicp::{assemble, NicpConfig, NicpMatch};
use posmatch::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{oracle, Report};

pub const GRAPHS: usize = 200;
pub const MAX_NODES: usize = 30;
pub const FD_STEP: f64 = 1e-6;
pub const BLOCK_TOL: f64 = 1e-4;
/// Blocks smaller than this are compared in absolute terms.
pub const BLOCK_FLOOR: f64 = 1e-6;
pub const TIME_LIMIT: Duration = Duration::from_secs(30);

struct Instance {
    graph: DeformationGraph,
    state: GraphState,
    matches: Vec<NicpMatch>,
    config: NicpConfig,
}

fn random_point(rng: &mut impl Rng, extent: f64) -> Point3 {
    Point3::new(
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
    )
}

fn random_vector(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    random_point(rng, scale).coords
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..=MAX_NODES);
    let nodes: Vec<Point3> = (0..n).map(|_| random_point(rng, 0.1)).collect();
    let edge_count = rng.random_range(0..=3 * n);
    let edges: Vec<(usize, usize)> = (0..edge_count).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
    let skin_k = if rng.random_bool(0.2) { None } else { Some(rng.random_range(1..=8)) };
    let gamma = rng.random_range(0.03..0.2);
    let graph = DeformationGraph::from_parts(nodes, edges, gamma, skin_k).expect("valid graph");
    let state = GraphState {
        rotations: (0..n).map(|_| oracle::exp(&random_vector(rng, 1.0))).collect(),
        translations: (0..n).map(|_| random_vector(rng, 0.05)).collect(),
        phi: vec![Vector3::zeros(); n],
    };
    let matches = (0..rng.random_range(1..40))
        .map(|_| {
            let s = random_point(rng, 0.12);
            NicpMatch::new(s, s + random_vector(rng, 0.05), rng.random_range(0.0..1.0))
        })
        .collect();
    let config = NicpConfig {
        lambda_c: rng.random_range(0.1..5.0),
        lambda_a: rng.random_range(0.1..20.0),
        ..NicpConfig::default()
    };
    Instance { graph, state, matches, config }
}

/// Residual at `δ = [φ | t]` around the instance state.
fn residual(inst: &Instance, delta: &DVector<f64>) -> DVector<f64> {
    let g = inst.graph.nodes();
    let n = g.len();
    let rot: Vec<Matrix3<f64>> = (0..n)
        .map(|i| oracle::exp(&Vector3::new(delta[3 * i], delta[3 * i + 1], delta[3 * i + 2])) * inst.state.rotations[i])
        .collect();
    let tr: Vec<Vector3<f64>> = (0..n)
        .map(|i| inst.state.translations[i] + Vector3::new(delta[3 * (n + i)], delta[3 * (n + i) + 1], delta[3 * (n + i) + 2]))
        .collect();
    let k = inst.graph.skin_k().unwrap_or(n).min(n);
    let gamma = inst.graph.gamma_skin();
    let mut out = Vec::new();
    for m in &inst.matches {
        let near = oracle::knn(g, &m.source, k);
        let raw: Vec<f64> = near.iter().map(|(_, d)| (-d * d / (2.0 * gamma * gamma)).exp()).collect();
        let total: f64 = raw.iter().sum();
        let mut warped = Vector3::zeros();
        for ((i, _), w) in near.iter().zip(&raw) {
            warped += w / total * (rot[*i] * (m.source - g[*i]) + g[*i].coords + tr[*i]);
        }
        let r = inst.config.lambda_c.sqrt() * m.confidence * (warped - m.target.coords);
        out.extend_from_slice(r.as_slice());
    }
    for &(i, j) in inst.graph.edges() {
        let r = inst.config.lambda_a.sqrt() * (rot[i] * (g[j] - g[i]) + g[i].coords + tr[i] - (g[j].coords + tr[j]));
        out.extend_from_slice(r.as_slice());
    }
    DVector::from_vec(out)
}

fn finite_difference(inst: &Instance) -> DMatrix<f64> {
    let cols = 6 * inst.graph.node_count();
    let base = DVector::zeros(cols);
    let rows = residual(inst, &base).len();
    let mut jac = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        let mut plus = base.clone();
        plus[c] = FD_STEP;
        let mut minus = base.clone();
        minus[c] = -FD_STEP;
        let col = (residual(inst, &plus) - residual(inst, &minus)) / (2.0 * FD_STEP);
        jac.set_column(c, &col);
    }
    jac
}

pub fn run() -> Report {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    for trial in 0..GRAPHS {
        let inst = instance(&mut rng);
        let (jac, r) = match assemble(&inst.graph, &inst.state, &inst.matches, &inst.config) {
            Ok(v) => v,
            Err(e) => {
                failures.push(format!("graph {trial}: {e}"));
                continue;
            }
        };
        let reference_r = residual(&inst, &DVector::zeros(6 * inst.graph.node_count()));
        if reference_r.len() != r.len() {
            failures.push(format!("graph {trial}: residual length {} vs {}", r.len(), reference_r.len()));
            continue;
        }
        let r_err = (&r - &reference_r).amax();
        worst_residual = worst_residual.max(r_err);
        if r_err > 1e-12 {
            failures.push(format!("graph {trial}: residual differs by {r_err:.2e}"));
        }
        let analytic = jac.to_dense();
        let numeric = finite_difference(&inst);
        for rb in 0..analytic.nrows() / 3 {
            for cb in 0..analytic.ncols() / 3 {
                let a = analytic.fixed_view::<3, 3>(3 * rb, 3 * cb);
                let f = numeric.fixed_view::<3, 3>(3 * rb, 3 * cb);
                let denom = a.norm().max(f.norm()).max(BLOCK_FLOOR);
                let err = (a - f).norm() / denom;
                worst = worst.max(err);
                if err >= BLOCK_TOL {
                    failures.push(format!("graph {trial}: block ({rb}, {cb}) relative error {err:.2e}"));
                }
            }
        }
    }
    Report::new(
        3,
        "N-ICP Jacobian vs finite differences",
        start.elapsed(),
        TIME_LIMIT,
        failures,
        format!("max block error {worst:.1e}, max residual mismatch {worst_residual:.1e}"),
    )
}
