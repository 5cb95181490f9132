//! JSON documents exchanged between subcommands.

use posmatch::geometry::{AnalyticWarp, WarpFunction};
use posmatch::metrics::FlowMetrics;
use posmatch::{CorrespondenceSet, RigidTransform, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundTruthWarp {
    Rigid(RigidTransform),
    Analytic(AnalyticWarp),
    /// Per-source-point displacement.
    Tabulated(Vec<[f64; 3]>),
}

impl GroundTruthWarp {
    pub fn to_warp(&self) -> WarpFunction {
        match self {
            Self::Rigid(t) => WarpFunction::Rigid(*t),
            Self::Analytic(a) => WarpFunction::Analytic(*a),
            Self::Tabulated(d) => WarpFunction::Tabulated(d.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect()),
        }
    }
}

/// Written by `synth`, read by `eval` and `register-nonrigid --gt`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthDoc {
    pub warp: GroundTruthWarp,
    pub correspondences: CorrespondenceSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerSummary {
    pub matches: usize,
    pub transform: RigidTransform,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidResult {
    pub transform: RigidTransform,
    pub inliers: usize,
    pub matches: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inlier_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_matching_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nfmr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registration_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowMetrics>,
}
