//! Metric implementations against brute-force references, plus threshold
//! monotonicity sweeps.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use posmatch::geometry::{Correspondence, CorrespondenceSet, WarpFunction};
use posmatch::metrics::{
    feature_matching_recall, flow_metrics, inlier_ratio, nfmr, registration_recall, MetricConfig,
};
use posmatch::{Point3, PointCloud, RigidTransform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{oracle, Report};

pub const INSTANCES: usize = 500;
pub const MAX_PAIRS: usize = 50;
pub const KNN: usize = 3;
pub const TIME_LIMIT: Duration = Duration::from_secs(60);

struct Instance {
    source: Vec<Point3>,
    target: Vec<Point3>,
    gt: RigidTransform,
    k_gt: Vec<(usize, usize)>,
    k_pred: Vec<(usize, usize)>,
}

fn random_point(rng: &mut impl Rng) -> Point3 {
    Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn jitter(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    scale * random_point(rng).coords
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(3..=MAX_PAIRS);
    let gt = RigidTransform::new(oracle::random_rotation(rng), jitter(rng, 1.0));
    let source: Vec<Point3> = (0..n).map(|_| random_point(rng)).collect();
    // Target: moved source points with noise, in shuffled order, plus extras.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut target: Vec<Point3> = order
        .iter()
        .map(|&i| oracle::apply_transform(&gt, &source[i]) + jitter(rng, 0.05))
        .collect();
    target.extend((0..rng.random_range(0..10)).map(|_| random_point(rng)));
    let k_gt: Vec<(usize, usize)> = order.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    let k_pred = (0..rng.random_range(1..=MAX_PAIRS))
        .map(|_| {
            if rng.random_bool(0.6) {
                k_gt[rng.random_range(0..k_gt.len())]
            } else {
                (rng.random_range(0..n), rng.random_range(0..target.len()))
            }
        })
        .collect();
    Instance { source, target, gt, k_gt, k_pred }
}

fn set(pairs: &[(usize, usize)]) -> CorrespondenceSet {
    pairs.iter().map(|&(s, t)| Correspondence::new(s, t, 1.0)).collect()
}

fn ir_reference(inst: &Instance, sigma: f64) -> f64 {
    let hits = inst
        .k_pred
        .iter()
        .filter(|&&(s, t)| (oracle::apply_transform(&inst.gt, &inst.source[s]) - inst.target[t]).norm() < sigma)
        .count();
    hits as f64 / inst.k_pred.len() as f64
}

fn nfmr_reference(inst: &Instance, sigma: f64) -> f64 {
    let anchors: Vec<Point3> = inst.k_pred.iter().map(|&(s, _)| inst.source[s]).collect();
    let flows: Vec<Vector3<f64>> = inst.k_pred.iter().map(|&(s, t)| inst.target[t] - inst.source[s]).collect();
    let mut hits = 0;
    for &(s, t) in &inst.k_gt {
        let u = inst.source[s];
        let near = oracle::knn(&anchors, &u, KNN);
        let flow = match near.iter().find(|(_, d)| *d < 1e-12) {
            Some((i, _)) => flows[*i],
            None => {
                let mut num = Vector3::zeros();
                let mut den = 0.0;
                for (i, d) in &near {
                    num += (1.0 / d) * flows[*i];
                    den += 1.0 / d;
                }
                num / den
            }
        };
        if (u + flow - inst.target[t]).norm() < sigma {
            hits += 1;
        }
    }
    hits as f64 / inst.k_gt.len() as f64
}

fn rmse_reference(estimate: &RigidTransform, pairs: &[(Point3, Point3)]) -> f64 {
    let sq: f64 = pairs.iter().map(|(p, q)| (oracle::apply_transform(estimate, p) - q).norm_squared()).sum();
    (sq / pairs.len() as f64).sqrt()
}

fn accurate(err: f64, norm: f64, abs: f64, rel: f64) -> bool {
    err < abs || (norm > 0.0 && err / norm < rel)
}

fn non_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0])
}

pub fn run() -> Report {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    let mut failures = Vec::new();
    let sigmas: Vec<f64> = (0..12).map(|i| 0.01 * 1.5f64.powi(i)).collect();
    let mut check = |name: &str, trial: usize, got: f64, want: f64| {
        if got != want {
            failures.push(format!("instance {trial}: {name} {got} vs reference {want}"));
        }
    };
    let mut monotone = Vec::new();

    let mut irs = Vec::new();
    let mut estimates = Vec::new();
    let mut gt_pairs = Vec::new();
    for trial in 0..INSTANCES {
        let inst = instance(&mut rng);
        let source = PointCloud::from(inst.source.clone());
        let target = PointCloud::from(inst.target.clone());
        let warp = WarpFunction::Rigid(inst.gt);
        let (pred, gt) = (set(&inst.k_pred), set(&inst.k_gt));

        let mut ir_sweep = Vec::new();
        let mut nfmr_sweep = Vec::new();
        for &sigma in &sigmas {
            let ir = inlier_ratio(&pred, &source, &target, &warp, sigma).unwrap_or(f64::NAN);
            check("IR", trial, ir, ir_reference(&inst, sigma));
            let nf = nfmr(&pred, &gt, &source, &target, sigma, KNN).unwrap_or(f64::NAN);
            check("NFMR", trial, nf, nfmr_reference(&inst, sigma));
            ir_sweep.push(ir);
            nfmr_sweep.push(nf);
        }
        if !non_decreasing(&ir_sweep) || !non_decreasing(&nfmr_sweep) {
            monotone.push(format!("instance {trial}: IR or NFMR decreases with sigma"));
        }
        irs.push(ir_reference(&inst, 0.1));

        // A perturbed estimate and the ground-truth point pairs.
        let dr = oracle::exp(&jitter(&mut rng, 0.1));
        estimates.push(RigidTransform::new(dr * inst.gt.rotation, inst.gt.translation + jitter(&mut rng, 0.2)));
        gt_pairs.push(
            inst.k_gt
                .iter()
                .map(|&(s, _)| (inst.source[s], oracle::apply_transform(&inst.gt, &inst.source[s])))
                .collect::<Vec<_>>(),
        );
    }

    for chunk in 0..INSTANCES / MAX_PAIRS {
        let range = chunk * MAX_PAIRS..(chunk + 1) * MAX_PAIRS;
        let (ir_chunk, est, pairs) = (&irs[range.clone()], &estimates[range.clone()], &gt_pairs[range]);
        let mut fmr_sweep = Vec::new();
        let mut rr_sweep = Vec::new();
        for step in 0..=20 {
            let thr = step as f64 * 0.05;
            let fmr = feature_matching_recall(ir_chunk, thr).unwrap_or(f64::NAN);
            let want = ir_chunk.iter().filter(|ir| **ir > thr).count() as f64 / ir_chunk.len() as f64;
            check("FMR", chunk, fmr, want);
            fmr_sweep.push(-fmr);

            let rr_thr = 0.02 * step as f64;
            let rr = registration_recall(est, pairs, rr_thr).unwrap_or(f64::NAN);
            let want = est.iter().zip(pairs).filter(|(e, p)| rmse_reference(e, p) < rr_thr).count() as f64
                / est.len() as f64;
            check("RR", chunk, rr, want);
            rr_sweep.push(rr);
        }
        if !non_decreasing(&fmr_sweep) || !non_decreasing(&rr_sweep) {
            monotone.push(format!("chunk {chunk}: FMR or RR not monotone in threshold"));
        }
    }

    for trial in 0..INSTANCES {
        let n = rng.random_range(1..=MAX_PAIRS);
        let gt: Vec<Vector3<f64>> = (0..n)
            .map(|_| if rng.random_bool(0.2) { Vector3::zeros() } else { jitter(&mut rng, 0.5) })
            .collect();
        let pred: Vec<Vector3<f64>> = gt.iter().map(|g| g + jitter(&mut rng, 0.15)).collect();
        let mut acc_sweep = Vec::new();
        for step in 1..=10 {
            let a = 0.02 * step as f64;
            let cfg = MetricConfig { acc_abs: [a, 2.0 * a], acc_rel: [a, 2.0 * a], ..MetricConfig::default() };
            let Ok(m) = flow_metrics(&pred, &gt, &cfg) else {
                monotone.push(format!("flow instance {trial}: metrics failed"));
                break;
            };
            let errs: Vec<(f64, f64)> = pred.iter().zip(&gt).map(|(p, g)| ((p - g).norm(), g.norm())).collect();
            let epe = errs.iter().map(|(e, _)| e).sum::<f64>() / n as f64;
            let acc = |k: f64| errs.iter().filter(|(e, g)| accurate(*e, *g, k * a, k * a)).count() as f64 / n as f64;
            check("EPE", trial, m.epe, epe);
            check("Acc5", trial, m.acc5, acc(1.0));
            check("Acc10", trial, m.acc10, acc(2.0));
            if m.acc10 < m.acc5 {
                monotone.push(format!("flow instance {trial}: Acc10 below Acc5"));
            }
            acc_sweep.push(m.acc5);
        }
        if !non_decreasing(&acc_sweep) {
            monotone.push(format!("flow instance {trial}: accuracy decreases with threshold"));
        }
    }

    failures.extend(monotone);
    Report::new(
        5,
        "metric oracles",
        start.elapsed(),
        TIME_LIMIT,
        failures,
        format!("{INSTANCES} instances of at most {MAX_PAIRS} pairs, exact agreement and monotone sweeps"),
    )
}
