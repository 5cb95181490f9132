//! Position-aware scoring, dual-softmax confidence and match selection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attention::{check_features, FeatureMatrix};
use crate::error::{Error, Result};
use crate::geometry::{Correspondence, CorrespondenceSet, PointCloud};
use crate::rope::{encode_rows, EncodingConfig};

/// `n̂ × m̂` raw match scores.
pub type ScoreMatrix = DMatrix<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    /// Confidence a pair must exceed to be selected.
    pub theta_c: f64,
    /// Keep only mutual row/column maxima.
    pub use_mnn: bool,
}

impl MatchConfig {
    pub fn rigid() -> Self {
        Self {
            theta_c: 0.05,
            use_mnn: false,
        }
    }

    pub fn deformable() -> Self {
        Self {
            theta_c: 0.1,
            use_mnn: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta_c) {
            return Err(Error::InvalidParameter(format!(
                "theta_c must lie in [0, 1) (got {})",
                self.theta_c
            )));
        }
        Ok(())
    }
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self::rigid()
    }
}

/// Dual-softmax confidences, optionally with the two softmax factors they
/// were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMatrix {
    values: DMatrix<f64>,
    factors: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl ConfidenceMatrix {
    /// Wraps precomputed confidences; entries must lie in `[0, 1]`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("confidences must lie in [0, 1]".into()));
        }
        Ok(Self { values, factors: None })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Row-wise softmax factor, when built by [`dual_softmax`].
    pub fn row_factor(&self) -> Option<&DMatrix<f64>> {
        self.factors.as_ref().map(|(r, _)| r)
    }

    /// Column-wise softmax factor, when built by [`dual_softmax`].
    pub fn col_factor(&self) -> Option<&DMatrix<f64>> {
        self.factors.as_ref().map(|(_, c)| c)
    }
}

/// `S(i,j) = ⟨Θ(Ŝ_i) W_S x_i, Θ(T̂_j) W_T x_j⟩ / √d`.
pub fn score_matrix(
    features_s: &FeatureMatrix,
    positions_s: &PointCloud,
    features_t: &FeatureMatrix,
    positions_t: &PointCloud,
    w_s: &DMatrix<f64>,
    w_t: &DMatrix<f64>,
    config: &EncodingConfig,
) -> Result<ScoreMatrix> {
    check_features(features_s, positions_s.len(), config)?;
    check_features(features_t, positions_t.len(), config)?;
    let d = config.dim;
    for w in [w_s, w_t] {
        if w.shape() != (d, d) {
            return Err(Error::ShapeMismatch(format!(
                "matching projection is {}×{}, expected {d}×{d}",
                w.nrows(),
                w.ncols()
            )));
        }
    }
    let mut a = features_s * w_s.transpose();
    encode_rows(&mut a, positions_s.points(), config)?;
    let mut b = features_t * w_t.transpose();
    encode_rows(&mut b, positions_t.points(), config)?;
    Ok(a * b.transpose() / (d as f64).sqrt())
}

/// `C(i,j) = softmax_row(S)(i,j) · softmax_col(S)(i,j)`.
pub fn dual_softmax(scores: &ScoreMatrix) -> ConfidenceMatrix {
    let (n, m) = scores.shape();
    let mut row = scores.clone();
    for mut r in row.row_iter_mut() {
        let max = r.max();
        r.apply(|v| *v = (*v - max).exp());
        let sum = r.sum();
        r /= sum;
    }
    let mut col = scores.clone();
    for mut c in col.column_iter_mut() {
        let max = c.max();
        c.apply(|v| *v = (*v - max).exp());
        let sum = c.sum();
        c /= sum;
    }
    let values = if n == 0 || m == 0 {
        DMatrix::zeros(n, m)
    } else {
        row.component_mul(&col)
    };
    ConfidenceMatrix {
        values,
        factors: Some((row, col)),
    }
}

/// First index of the maximum, scanning in order.
fn first_argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Pairs with confidence above `theta_c`, in row-major order; with MNN on,
/// only cells that are the first maximum of both their row and column.
pub fn select_matches(confidence: &ConfidenceMatrix, config: &MatchConfig) -> Result<CorrespondenceSet> {
    config.validate()?;
    let c = confidence.values();
    let (n, m) = c.shape();
    let col_best: Vec<Option<usize>> = if config.use_mnn {
        (0..m).map(|j| first_argmax(c.column(j).iter().copied())).collect()
    } else {
        Vec::new()
    };
    let mut out = CorrespondenceSet::default();
    for i in 0..n {
        if config.use_mnn {
            let Some(j) = first_argmax(c.row(i).iter().copied()) else {
                continue;
            };
            if c[(i, j)] > config.theta_c && col_best[j] == Some(i) {
                out.push(Correspondence::new(i, j, c[(i, j)]));
            }
        } else {
            for j in 0..m {
                if c[(i, j)] > config.theta_c {
                    out.push(Correspondence::new(i, j, c[(i, j)]));
                }
            }
        }
    }
    Ok(out)
}

/// The `n_hat` most confident cells (ties in row-major order), weighted by
/// confidence normalized to sum one over the selection.
pub fn top_soft_matches(confidence: &ConfidenceMatrix, n_hat: usize) -> Result<CorrespondenceSet> {
    if n_hat == 0 {
        return Err(Error::InvalidParameter("n_hat must be at least 1".into()));
    }
    let c = confidence.values();
    let (n, m) = c.shape();
    if n * m == 0 {
        return Err(Error::EmptyInput("confidence matrix is empty"));
    }
    let take = n_hat.min(n * m);
    // Row-major linear index; a stable key for ties.
    let mut cells: Vec<(usize, f64)> = (0..n * m).map(|k| (k, c[(k / m, k % m)])).collect();
    let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if take < cells.len() {
        cells.select_nth_unstable_by(take - 1, by_rank);
        cells.truncate(take);
    }
    cells.sort_unstable_by(by_rank);

    let total: f64 = cells.iter().map(|(_, v)| v).sum();
    let uniform = total <= 0.0;
    if uniform {
        log::warn!("all selected confidences are zero; using uniform weights");
    }
    Ok(cells
        .into_iter()
        .map(|(k, v)| {
            let w = if uniform { 1.0 / take as f64 } else { v / total };
            Correspondence::new(k / m, k % m, w)
        })
        .collect())
}
