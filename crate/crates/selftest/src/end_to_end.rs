//! Two-pass pipeline plus RANSAC on synthetic rigid pairs.

use std::time::{Duration, Instant};

use posmatch::config::RunConfig;
use posmatch::geometry::WarpFunction;
use posmatch::metrics::{inlier_ratio, registration_recall};
use posmatch::pipeline::{run_pipeline, PipelineOptions, PipelineWeights};
use posmatch::ransac::ransac_rigid;
use posmatch::synth::{synth_rigid_pair, CoordinateFeatures};
use posmatch::{Point3, Result, RigidTransform};

use crate::Report;

pub const TRIALS: u64 = 50;
pub const RR_THRESHOLD: f64 = 0.2;
pub const IR_SIGMA: f64 = 0.1;
pub const MIN_IR_GAIN_FRACTION: f64 = 0.9;
pub const TIME_LIMIT: Duration = Duration::from_secs(300);

#[derive(Clone, Debug)]
pub struct Scenario {
    pub points: usize,
    pub overlap: f64,
    pub noise: f64,
    pub feature_bandwidth: f64,
    pub feature_scale: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            points: 256,
            overlap: 0.5,
            noise: 0.01,
            feature_bandwidth: 0.1,
            feature_scale: 12.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trial {
    pub estimate: RigidTransform,
    pub gt_pairs: Vec<(Point3, Point3)>,
    pub ir: [f64; 2],
    pub match_counts: [usize; 2],
}

pub fn run_trial(seed: u64, scenario: &Scenario) -> Result<Trial> {
    let config = RunConfig::rigid();
    let pair = synth_rigid_pair(seed, scenario.points, scenario.overlap, scenario.noise)?;
    // Descriptors are functions of the position in the source frame, so a
    // point and its correspondent describe alike up to noise.
    let features = CoordinateFeatures::new(
        config.encoding.dim,
        scenario.feature_bandwidth,
        scenario.feature_scale,
        seed ^ 0x5eed,
    )?;
    let back = pair.transform.inverse();
    let canonical_t: Vec<Point3> = pair.target.iter().map(|q| back.apply(q)).collect();
    let fs = features.describe(pair.source.points());
    let ft = features.describe(&canonical_t);

    let options = PipelineOptions::new(config.encoding, config.matching.clone(), config.loss.clone());
    let weights = PipelineWeights::passthrough(config.encoding.dim);
    let out = run_pipeline(&pair.source, &pair.target, &fs, &ft, &weights, &options, None)?;

    let warp = WarpFunction::Rigid(pair.transform);
    let mut ir = [0.0; 2];
    for (slot, layer) in ir.iter_mut().zip(&out.layers) {
        *slot = inlier_ratio(&layer.matches, &pair.source, &pair.target, &warp, IR_SIGMA)?;
    }
    let estimate = ransac_rigid(&out.matches, &pair.source, &pair.target, &config.ransac, seed)?.transform;
    let gt_pairs = pair
        .correspondences
        .iter()
        .map(|c| (pair.source[c.source], pair.target[c.target]))
        .collect();
    let match_counts = [out.layers[0].matches.len(), out.layers[1].matches.len()];
    Ok(Trial { estimate, gt_pairs, ir, match_counts })
}

pub fn run() -> Report {
    let start = Instant::now();
    let scenario = Scenario::default();
    let mut failures = Vec::new();
    let mut trials = Vec::new();
    for seed in 0..TRIALS {
        match run_trial(seed, &scenario) {
            Ok(t) => trials.push(t),
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let estimates: Vec<RigidTransform> = trials.iter().map(|t| t.estimate).collect();
    let gt: Vec<Vec<(Point3, Point3)>> = trials.iter().map(|t| t.gt_pairs.clone()).collect();
    let rr = if trials.is_empty() { 0.0 } else { registration_recall(&estimates, &gt, RR_THRESHOLD).unwrap_or(0.0) };
    if rr < 1.0 {
        failures.push(format!("registration recall {rr:.3} at {RR_THRESHOLD} m"));
    }
    let gains = trials.iter().filter(|t| t.ir[1] >= t.ir[0]).count();
    let fraction = gains as f64 / TRIALS as f64;
    if fraction < MIN_IR_GAIN_FRACTION {
        failures.push(format!("second-layer IR at least first-layer IR on {gains}/{TRIALS} trials"));
    }
    let n = trials.len().max(1) as f64;
    let mean_ir = |l: usize| trials.iter().map(|t| t.ir[l]).sum::<f64>() / n;
    let mean_count = |l: usize| trials.iter().map(|t| t.match_counts[l] as f64).sum::<f64>() / n;
    Report::new(
        7,
        "end-to-end rigid registration",
        start.elapsed(),
        TIME_LIMIT,
        failures,
        format!(
            "RR {rr:.2}, IR2 >= IR1 on {gains}/{TRIALS}, mean IR {:.3} -> {:.3}, mean matches {:.1} -> {:.1}",
            mean_ir(0),
            mean_ir(1),
            mean_count(0),
            mean_count(1)
        ),
    )
}
