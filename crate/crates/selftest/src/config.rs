//! Preset values as they appear in the dumped configuration documents.

use std::time::{Duration, Instant};

use posmatch::config::{Mode, RunConfig};
use serde_json::{json, Value};

use crate::Report;

pub const TIME_LIMIT: Duration = Duration::from_secs(5);

/// `(JSON pointer, rigid, deformable)`.
pub fn expected() -> Vec<(&'static str, Value, Value)> {
    vec![
        ("/metrics/sigma_inlier", json!(0.1), json!(0.04)),
        ("/metrics/rr_rmse_threshold", json!(0.2), json!(0.2)),
        ("/metrics/fmr_ir_threshold", json!(0.05), json!(0.05)),
        ("/metrics/nfmr_sigma", json!(0.04), json!(0.04)),
        ("/matching/theta_c", json!(0.05), json!(0.1)),
        ("/matching/use_mnn", json!(false), json!(true)),
        ("/subsample/voxel", json!(0.025), json!(0.01)),
        ("/supervision/gt_match_radius", json!(0.06), json!(0.024)),
        ("/loss/lambda_w", json!(0.0), json!(0.1)),
    ]
}

/// Checks a dumped document for `mode`; returns one message per mismatch.
pub fn check_dump(text: &str, mode: Mode) -> Vec<String> {
    let doc: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return vec![format!("{mode:?} dump is not JSON: {e}")],
    };
    let mut out = Vec::new();
    for (pointer, rigid, deformable) in expected() {
        let want = if mode == Mode::Rigid { rigid } else { deformable };
        match doc.pointer(pointer) {
            Some(v) if *v == want => {}
            other => out.push(format!("{mode:?} {pointer}: {other:?}, expected {want}")),
        }
    }
    // The dump must read back to the same preset.
    match RunConfig::from_json(text) {
        Ok(back) if back == RunConfig::preset(mode) => {}
        Ok(_) => out.push(format!("{mode:?} dump does not read back to the preset")),
        Err(e) => out.push(format!("{mode:?} dump does not parse: {e}")),
    }
    out
}

pub fn run() -> Report {
    let start = Instant::now();
    let mut failures = Vec::new();
    for mode in [Mode::Rigid, Mode::Deformable] {
        failures.extend(check_dump(&RunConfig::preset(mode).to_json_pretty(), mode));
    }
    Report::new(
        8,
        "hyperparameter defaults",
        start.elapsed(),
        TIME_LIMIT,
        failures,
        format!("{} values per mode", expected().len()),
    )
}
