use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud, Vector3};
use crate::deform::{DeformationGraph, GraphState};
use crate::error::{Error, Result};
use crate::procrustes::RigidTransform;

/// Smooth closed-form deformations used for synthetic ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpKind {
    /// Rotation about the y axis by `magnitude * x` radians.
    Bend,
    /// Rotation about the x axis by `magnitude * x` radians.
    Twist,
    /// Displacement along z of `magnitude * sin(2 pi x)` meters.
    Wave,
}

impl std::str::FromStr for WarpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bend" => Ok(Self::Bend),
            "twist" => Ok(Self::Twist),
            "wave" => Ok(Self::Wave),
            other => Err(Error::InvalidParameter(format!("unknown warp kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticWarp {
    pub kind: WarpKind,
    pub magnitude: f64,
}

impl AnalyticWarp {
    pub fn new(kind: WarpKind, magnitude: f64) -> Self {
        Self { kind, magnitude }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let m = self.magnitude;
        match self.kind {
            WarpKind::Bend => {
                let (s, c) = (m * p.x).sin_cos();
                Point3::new(c * p.x + s * p.z, p.y, -s * p.x + c * p.z)
            }
            WarpKind::Twist => {
                let (s, c) = (m * p.x).sin_cos();
                Point3::new(p.x, c * p.y - s * p.z, s * p.y + c * p.z)
            }
            WarpKind::Wave => Point3::new(
                p.x,
                p.y,
                p.z + m * (2.0 * std::f64::consts::PI * p.x).sin(),
            ),
        }
    }
}

/// A map R^3 -> R^3 aligning a source cloud to its target.
#[derive(Clone, Debug)]
pub enum WarpFunction {
    Rigid(RigidTransform),
    Graph {
        graph: DeformationGraph,
        state: GraphState,
    },
    /// Per-source-point displacement; only defined on the source ids.
    Tabulated(Vec<Vector3>),
    Analytic(AnalyticWarp),
}

impl WarpFunction {
    pub fn identity() -> Self {
        Self::Rigid(RigidTransform::identity())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Rigid(_) => "rigid",
            Self::Graph { .. } => "graph",
            Self::Tabulated(_) => "tabulated",
            Self::Analytic(_) => "analytic",
        }
    }

    /// Evaluates the warp at an arbitrary point.
    pub fn apply(&self, p: &Point3) -> Result<Point3> {
        match self {
            Self::Rigid(t) => Ok(t.apply(p)),
            Self::Graph { graph, state } => Ok(crate::deform::warp_point(p, graph, state)),
            Self::Tabulated(_) => Err(Error::WarpNotEvaluable("tabulated")),
            Self::Analytic(w) => Ok(w.apply(p)),
        }
    }

    /// Evaluates the warp at source point `id`, located at `p`.
    pub fn apply_source(&self, id: usize, p: &Point3) -> Result<Point3> {
        match self {
            Self::Tabulated(d) => d.get(id).map(|d| p + d).ok_or(Error::IndexOutOfRange {
                what: "tabulated warp",
                index: id,
                len: d.len(),
            }),
            _ => self.apply(p),
        }
    }

    /// Warps every point of a source cloud.
    pub fn warp_cloud(&self, source: &PointCloud) -> Result<PointCloud> {
        if let Self::Tabulated(d) = self {
            if d.len() != source.len() {
                return Err(Error::DimensionMismatch {
                    expected: source.len(),
                    actual: d.len(),
                });
            }
        }
        let points = source
            .iter()
            .enumerate()
            .map(|(i, p)| self.apply_source(i, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(PointCloud::from(points))
    }
}
