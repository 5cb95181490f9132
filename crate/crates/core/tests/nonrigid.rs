use approx::assert_relative_eq;
use posmatch::deform::{build_graph, warp_point, GraphConfig, GraphState};
use posmatch::geometry::{WarpKind, WarpFunction};
use posmatch::metrics::{flow_metrics, MetricConfig};
use posmatch::nicp::{energy, gauss_newton_solve, matches_from_set, NicpConfig};
use posmatch::synth::synth_deformable_pair;
use posmatch::Vector3;

#[test]
fn satisfied_matches_converge_immediately() {
    let pair = synth_deformable_pair(2, 200, WarpKind::Bend, 0.0).unwrap();
    let graph = build_graph(&pair.source, &GraphConfig::default()).unwrap();
    let matches = matches_from_set(&pair.correspondences, &pair.source, &pair.target).unwrap();
    let out = gauss_newton_solve(&graph, &GraphState::identity(graph.node_count()), &matches, &NicpConfig::default()).unwrap();
    assert!(out.initial_energy < 1e-24);
    assert!(out.trace.len() <= 1);
    assert!(out.trace.iter().all(|r| r.step_norm < 1e-12));
}

#[test]
fn wave_recovery_yields_accurate_flow() {
    let pair = synth_deformable_pair(6, 400, WarpKind::Wave, 0.01).unwrap();
    let graph = build_graph(&pair.source, &GraphConfig::default()).unwrap();
    let matches = matches_from_set(&pair.correspondences, &pair.source, &pair.target).unwrap();
    let cfg = NicpConfig::default();
    let initial = GraphState::identity(graph.node_count());
    let out = gauss_newton_solve(&graph, &initial, &matches, &cfg).unwrap();
    assert!(out.final_energy() < out.initial_energy);
    assert_relative_eq!(
        out.final_energy(),
        energy(&graph, &out.state, &matches, &cfg).unwrap(),
        max_relative = 1e-10
    );

    let truth = WarpFunction::Analytic(pair.warp);
    let pred: Vec<Vector3> = pair.source.iter().map(|p| warp_point(p, &graph, &out.state) - p).collect();
    let gt: Vec<Vector3> = pair.source.iter().map(|p| truth.apply(p).unwrap() - p).collect();
    let m = flow_metrics(&pred, &gt, &MetricConfig::deformable()).unwrap();
    assert!(m.epe < 1e-3, "{m:?}");
    assert_eq!(m.acc5, 1.0);
}
