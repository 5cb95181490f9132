//! Embedded deformation graph: nodes with per-node rotation and translation,
//! blended into a dense warp by normalized Gaussian skinning weights.
//!
//! ```text
//! W(p) = Σ_i w_{p,i} (R_i (p − g_i) + g_i + t_i)
//! w_{p,i} ∝ exp(−‖g_i − p‖² / (2γ²)),   Σ_i w_{p,i} = 1
//! ```

mod graph;
mod so3;

use nalgebra::{DVector, Matrix3};

pub use graph::{build_graph, DeformationGraph, GraphConfig};
pub use so3::{exp_so3, hat, orthonormalize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Vector3};

/// Skinning weights of one point: `(node id, weight)`, weights positive and
/// summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinningWeights {
    pub entries: Vec<(usize, f64)>,
}

impl SkinningWeights {
    pub fn iter(&self) -> impl Iterator<Item = &(usize, f64)> {
        self.entries.iter()
    }

    pub fn weight_of(&self, node: usize) -> f64 {
        self.entries
            .iter()
            .find(|(n, _)| *n == node)
            .map_or(0.0, |(_, w)| *w)
    }
}

/// Gaussian skinning over the `skin_k` nearest nodes (all nodes when unset).
///
/// The exponent is shifted by the nearest squared distance before
/// normalizing, which leaves the weights unchanged but keeps them from
/// underflowing far from the graph.
pub fn skinning_weights(p: &Point3, graph: &DeformationGraph) -> Result<SkinningWeights> {
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::EmptyInput("deformation graph has no nodes"));
    }
    let k = graph.skin_k().map_or(n, |k| k.min(n));
    let neighbors = graph.node_tree().knn(p, k);
    let inv = 1.0 / (2.0 * graph.gamma_skin() * graph.gamma_skin());
    let d0 = neighbors[0].distance * neighbors[0].distance;
    let raw: Vec<(usize, f64)> = neighbors
        .iter()
        .map(|nb| (nb.id, (-(nb.distance * nb.distance - d0) * inv).exp()))
        .collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    let mut entries: Vec<(usize, f64)> = raw
        .into_iter()
        .map(|(id, w)| (id, w / total))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    entries.sort_by_key(|(id, _)| *id);
    Ok(SkinningWeights { entries })
}

/// Per-node motion. `phi` is the pending axis-angle increment and is zero
/// between solver iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    pub rotations: Vec<Matrix3<f64>>,
    pub translations: Vec<Vector3>,
    pub phi: Vec<Vector3>,
}

impl GraphState {
    pub fn identity(nodes: usize) -> Self {
        Self {
            rotations: vec![Matrix3::identity(); nodes],
            translations: vec![Vector3::zeros(); nodes],
            phi: vec![Vector3::zeros(); nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.rotations.len()
    }

    /// Every node moved by the same rigid motion `p ↦ R p + t`.
    pub fn from_global_rigid(graph: &DeformationGraph, r: &Matrix3<f64>, t: &Vector3) -> Self {
        let n = graph.node_count();
        Self {
            rotations: vec![*r; n],
            translations: graph
                .nodes()
                .iter()
                .map(|g| r * g.coords + t - g.coords)
                .collect(),
            phi: vec![Vector3::zeros(); n],
        }
    }

    /// `R_i ← exp(Δφ_i^) R_i` (re-orthonormalized), `t_i ← t_i + Δt_i`.
    /// `delta` is laid out as all rotation increments, then all translation
    /// increments, three entries per node.
    pub fn apply_update(&self, delta: &DVector<f64>) -> Result<Self> {
        let n = self.node_count();
        if delta.len() != 6 * n {
            return Err(Error::DimensionMismatch {
                expected: 6 * n,
                actual: delta.len(),
            });
        }
        let mut next = self.clone();
        for i in 0..n {
            let dphi = Vector3::new(delta[3 * i], delta[3 * i + 1], delta[3 * i + 2]);
            let off = 3 * n + 3 * i;
            let dt = Vector3::new(delta[off], delta[off + 1], delta[off + 2]);
            if dphi != Vector3::zeros() {
                next.rotations[i] = orthonormalize(&(exp_so3(&dphi) * self.rotations[i]));
            }
            next.translations[i] += dt;
            next.phi[i] = Vector3::zeros();
        }
        Ok(next)
    }
}

/// Warp of a point with precomputed skinning weights.
pub fn warp_with_weights(p: &Point3, weights: &SkinningWeights, graph: &DeformationGraph, state: &GraphState) -> Point3 {
    let mut out = Vector3::zeros();
    for &(i, w) in &weights.entries {
        let g = graph.nodes()[i].coords;
        out += w * (state.rotations[i] * (p.coords - g) + g + state.translations[i]);
    }
    Point3::from(out)
}

/// `W(p)` for the current graph state. Returns `p` for an empty graph.
pub fn warp_point(p: &Point3, graph: &DeformationGraph, state: &GraphState) -> Point3 {
    match skinning_weights(p, graph) {
        Ok(w) => warp_with_weights(p, &w, graph, state),
        Err(_) => *p,
    }
}

pub fn warp_cloud(cloud: &PointCloud, graph: &DeformationGraph, state: &GraphState) -> PointCloud {
    cloud.map(|p| warp_point(p, graph, state))
}
