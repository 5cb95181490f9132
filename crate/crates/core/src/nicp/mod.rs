//! Non-rigid ICP over an embedded deformation graph.
//!
//! Energy: `λ_c Σ c² ‖W(p_s) − p_t‖² + λ_a Σ_(i,j) ‖R_i(g_j − g_i) + g_i + t_i − (g_j + t_j)‖²`,
//! minimized by damped Gauss–Newton with rotations re-linearized around the
//! current estimate (`R_i ← exp(φ_i^) R_i`, φ reset to zero every step).

mod jacobian;

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};

pub use jacobian::SparseJacobian;

use crate::deform::{exp_so3, hat, skinning_weights, warp_with_weights, DeformationGraph, GraphState, SkinningWeights};
use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, Point3, PointCloud, Vector3};

/// Largest damping tried before giving up on a singular system.
const MAX_DAMPING: f64 = 1e12;
const MIN_DAMPING: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NicpConfig {
    /// Correspondence term weight λ_c.
    pub lambda_c: f64,
    /// ARAP regularization weight λ_a.
    pub lambda_a: f64,
    pub max_iters: usize,
    /// Stop when `‖Δ‖∞` drops below this.
    pub step_tol: f64,
    /// Stop when the relative energy decrease drops below this.
    pub energy_tol: f64,
    /// Initial Levenberg damping μ added to the normal-equation diagonal.
    pub lm_damping: f64,
    /// Graphs with more nodes use the sparse factorization.
    pub dense_node_limit: usize,
}

impl Default for NicpConfig {
    fn default() -> Self {
        Self {
            lambda_c: 1.0,
            lambda_a: 10.0,
            max_iters: 50,
            step_tol: 1e-10,
            energy_tol: 1e-12,
            lm_damping: 1e-6,
            dense_node_limit: 300,
        }
    }
}

impl NicpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c > 0.0 && self.lambda_a > 0.0) {
            return Err(Error::InvalidParameter("term weights must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.lm_damping >= 0.0) {
            return Err(Error::InvalidParameter("lm_damping must be non-negative".into()));
        }
        Ok(())
    }
}

/// A correspondence in coordinates: source point, target point, confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NicpMatch {
    pub source: Point3,
    pub target: Point3,
    pub confidence: f64,
}

impl NicpMatch {
    pub fn new(source: Point3, target: Point3, confidence: f64) -> Self {
        Self {
            source,
            target,
            confidence,
        }
    }
}

/// Resolves id pairs into coordinate matches.
pub fn matches_from_set(
    set: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
) -> Result<Vec<NicpMatch>> {
    set.iter()
        .map(|c| {
            Ok(NicpMatch::new(
                *source.point(c.source)?,
                *target.point(c.target)?,
                c.confidence,
            ))
        })
        .collect()
}

/// Matches with their skinning weights, fixed for a given graph.
#[derive(Clone, Debug)]
pub struct NicpProblem<'g> {
    graph: &'g DeformationGraph,
    matches: Vec<(NicpMatch, SkinningWeights)>,
}

impl<'g> NicpProblem<'g> {
    pub fn new(graph: &'g DeformationGraph, matches: &[NicpMatch]) -> Result<Self> {
        if graph.node_count() == 0 {
            return Err(Error::EmptyInput("deformation graph has no nodes"));
        }
        let matches = matches
            .iter()
            .map(|m| Ok((*m, skinning_weights(&m.source, graph)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { graph, matches })
    }

    pub fn graph(&self) -> &DeformationGraph {
        self.graph
    }

    pub fn match_count(&self) -> usize {
        self.matches.len()
    }

    fn check_state(&self, state: &GraphState) -> Result<()> {
        if state.node_count() != self.graph.node_count() {
            return Err(Error::DimensionMismatch {
                expected: self.graph.node_count(),
                actual: state.node_count(),
            });
        }
        Ok(())
    }

    /// Stacked residual vector: correspondences, then directed edges.
    pub fn residuals(&self, state: &GraphState, config: &NicpConfig) -> Result<DVector<f64>> {
        self.check_state(state)?;
        let eff = effective_state(state);
        let n_res = self.matches.len() + self.graph.edges().len();
        let mut r = DVector::zeros(3 * n_res);
        for (k, (m, w)) in self.matches.iter().enumerate() {
            let v = corr_residual_with(m, w, self.graph, &eff, config);
            r.fixed_rows_mut::<3>(3 * k).copy_from(&v);
        }
        let base = self.matches.len();
        for (k, &edge) in self.graph.edges().iter().enumerate() {
            let v = reg_residual(edge, self.graph, &eff, config);
            r.fixed_rows_mut::<3>(3 * (base + k)).copy_from(&v);
        }
        Ok(r)
    }

    pub fn energy(&self, state: &GraphState, config: &NicpConfig) -> Result<f64> {
        self.check_state(state)?;
        let eff = effective_state(state);
        let corr: f64 = self
            .matches
            .iter()
            .map(|(m, w)| {
                let d = warp_with_weights(&m.source, w, self.graph, &eff) - m.target;
                m.confidence * m.confidence * d.norm_squared()
            })
            .sum();
        let reg: f64 = self
            .graph
            .edges()
            .iter()
            .map(|&(i, j)| arap_term(i, j, self.graph, &eff).norm_squared())
            .sum();
        Ok(config.lambda_c * corr + config.lambda_a * reg)
    }

    /// Jacobian at φ = 0 together with the residual vector.
    pub fn assemble(
        &self,
        state: &GraphState,
        config: &NicpConfig,
    ) -> Result<(SparseJacobian, DVector<f64>)> {
        self.check_state(state)?;
        if state.phi.iter().any(|p| *p != Vector3::zeros()) {
            return Err(Error::InvalidParameter(
                "jacobian is linearized at zero rotation increments".into(),
            ));
        }
        let n = self.graph.node_count();
        let sc = config.lambda_c.sqrt();
        let sa = config.lambda_a.sqrt();
        let nodes = self.graph.nodes();
        let mut rows = Vec::with_capacity(self.matches.len() + self.graph.edges().len());

        for (m, w) in &self.matches {
            let scale = sc * m.confidence;
            if scale == 0.0 {
                rows.push(Vec::new());
                continue;
            }
            let mut row = Vec::with_capacity(2 * w.entries.len());
            for &(i, wi) in &w.entries {
                let arm = state.rotations[i] * (m.source - nodes[i]);
                row.push((i, -scale * wi * hat(&arm)));
            }
            for &(i, wi) in &w.entries {
                row.push((n + i, scale * wi * Matrix3::identity()));
            }
            rows.push(row);
        }
        for &(i, j) in self.graph.edges() {
            let arm = state.rotations[i] * (nodes[j] - nodes[i]);
            rows.push(vec![
                (i, -sa * hat(&arm)),
                (n + i, sa * Matrix3::identity()),
                (n + j, -sa * Matrix3::identity()),
            ]);
        }
        let r = self.residuals(state, config)?;
        Ok((SparseJacobian::new(n, rows), r))
    }
}

/// State with any pending increments folded into the rotations.
fn effective_state(state: &GraphState) -> std::borrow::Cow<'_, GraphState> {
    if state.phi.iter().all(|p| *p == Vector3::zeros()) {
        std::borrow::Cow::Borrowed(state)
    } else {
        let mut s = state.clone();
        for (r, phi) in s.rotations.iter_mut().zip(&state.phi) {
            *r = exp_so3(phi) * *r;
        }
        s.phi.iter_mut().for_each(|p| *p = Vector3::zeros());
        std::borrow::Cow::Owned(s)
    }
}

fn arap_term(i: usize, j: usize, graph: &DeformationGraph, state: &GraphState) -> Vector3 {
    let (gi, gj) = (graph.nodes()[i].coords, graph.nodes()[j].coords);
    state.rotations[i] * (gj - gi) + gi + state.translations[i] - (gj + state.translations[j])
}

fn corr_residual_with(
    m: &NicpMatch,
    weights: &SkinningWeights,
    graph: &DeformationGraph,
    state: &GraphState,
    config: &NicpConfig,
) -> Vector3 {
    let warped = warp_with_weights(&m.source, weights, graph, state);
    config.lambda_c.sqrt() * m.confidence * (warped - m.target)
}

/// `√λ_c · c · (W(p_s) − p_t)`.
pub fn corr_residual(
    m: &NicpMatch,
    graph: &DeformationGraph,
    state: &GraphState,
    config: &NicpConfig,
) -> Result<Vector3> {
    let w = skinning_weights(&m.source, graph)?;
    Ok(corr_residual_with(m, &w, graph, &effective_state(state), config))
}

/// `√λ_a · (R_i(g_j − g_i) + g_i + t_i − (g_j + t_j))`.
pub fn reg_residual(
    edge: (usize, usize),
    graph: &DeformationGraph,
    state: &GraphState,
    config: &NicpConfig,
) -> Vector3 {
    config.lambda_a.sqrt() * arap_term(edge.0, edge.1, graph, &effective_state(state))
}

pub fn assemble(
    graph: &DeformationGraph,
    state: &GraphState,
    matches: &[NicpMatch],
    config: &NicpConfig,
) -> Result<(SparseJacobian, DVector<f64>)> {
    NicpProblem::new(graph, matches)?.assemble(state, config)
}

pub fn energy(
    graph: &DeformationGraph,
    state: &GraphState,
    matches: &[NicpMatch],
    config: &NicpConfig,
) -> Result<f64> {
    NicpProblem::new(graph, matches)?.energy(state, config)
}

/// One line of the solver trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    pub step_norm: f64,
    pub damping: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub state: GraphState,
    pub initial_energy: f64,
    /// One record per iteration; energies are those of the accepted state.
    pub trace: Vec<IterationRecord>,
}

impl SolveOutput {
    pub fn final_energy(&self) -> f64 {
        self.trace.last().map_or(self.initial_energy, |r| r.energy)
    }

    /// Trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace records serialize") + "\n")
            .collect()
    }
}

/// Levenberg-damped Gauss–Newton.
///
/// Each iteration solves `(JᵀJ + μI) Δ = −Jᵀr` by direct factorization
/// (dense LU, or sparse Cholesky above `dense_node_limit` nodes). A step
/// that raises the energy is rejected and retried with `μ ← 10μ`; an
/// accepted step halves μ.
pub fn gauss_newton_solve(
    graph: &DeformationGraph,
    initial: &GraphState,
    matches: &[NicpMatch],
    config: &NicpConfig,
) -> Result<SolveOutput> {
    config.validate()?;
    if matches.is_empty() {
        return Err(Error::EmptyInput("non-rigid registration needs at least one match"));
    }
    let problem = NicpProblem::new(graph, matches)?;
    let dense = graph.node_count() <= config.dense_node_limit;

    let mut state = effective_state(initial).into_owned();
    let initial_energy = problem.energy(&state, config)?;
    let mut current = initial_energy;
    let mut damping = config.lm_damping;
    let floor = if config.lm_damping > 0.0 { MIN_DAMPING } else { 0.0 };
    let mut trace = Vec::new();

    for iteration in 1..=config.max_iters {
        let (jac, r) = problem.assemble(&state, config)?;
        let gradient = jac.transpose_mul(&r);

        let mut accepted = None;
        loop {
            let Some(delta) = jacobian::solve_normal_equations(&jac, &gradient, damping, dense) else {
                damping = if damping == 0.0 { 1e-6 } else { damping * 10.0 };
                if damping > MAX_DAMPING {
                    return Err(Error::Underdetermined);
                }
                continue;
            };
            let candidate = state.apply_update(&delta)?;
            let e = problem.energy(&candidate, config)?;
            if e <= current {
                damping = (damping * 0.5).max(floor);
                accepted = Some((candidate, e, delta.amax()));
                break;
            }
            damping = (damping * 10.0).max(1e-9);
            if damping > MAX_DAMPING {
                break;
            }
        }

        let Some((candidate, e, step_norm)) = accepted else {
            // No descent left at any damping: local minimum to precision.
            log::debug!("nicp: no decreasing step at iteration {iteration}");
            break;
        };
        let decrease = current - e;
        let previous = current;
        state = candidate;
        current = e;
        trace.push(IterationRecord {
            iteration,
            energy: e,
            step_norm,
            damping,
        });
        if step_norm < config.step_tol || decrease <= config.energy_tol * previous {
            break;
        }
    }

    Ok(SolveOutput {
        state,
        initial_energy,
        trace,
    })
}
