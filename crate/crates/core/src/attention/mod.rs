//! Position-aware transformer block: self attention on each cloud, then
//! cross attention in both directions.
//!
//! Queries and keys carry the rotary code of their point; values do not, so
//! positions only ever shape attention weights and never leak into features.

mod loss;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub use loss::{matching_loss, total_loss, warping_loss, LossConfig, MatchingLoss};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rope::{encode_rows, EncodingConfig};

/// `n × d` per-point descriptors, one row per point.
pub type FeatureMatrix = DMatrix<f64>;

/// Checks a feature matrix against the encoding and its cloud.
pub fn check_features(features: &FeatureMatrix, points: usize, config: &EncodingConfig) -> Result<()> {
    config.validate()?;
    if features.ncols() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.dim,
            actual: features.ncols(),
        });
    }
    if features.nrows() != points {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} points",
            features.nrows(),
            points
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("features must be finite".into()));
    }
    Ok(())
}

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
        }
    }

    fn random(input: usize, output: usize, bound: f64, rng: &mut impl Rng) -> Self {
        Self {
            weight: DMatrix::from_fn(output, input, |_, _| rng.random_range(-bound..bound)),
            bias: DVector::from_fn(output, |_, _| rng.random_range(-bound..bound)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the layer to every row of `x`.
    pub fn forward_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.weight.transpose();
        for mut row in y.row_iter_mut() {
            row += self.bias.transpose();
        }
        y
    }
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Three affine layers, `2d → d → d → d`, GELU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: [Linear; 3],
}

impl Mlp {
    pub fn zeros(d: usize) -> Self {
        Self {
            layers: [Linear::zeros(2 * d, d), Linear::zeros(d, d), Linear::zeros(d, d)],
        }
    }

    pub fn forward_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = self.layers[0].forward_rows(x);
        h.apply(|v| *v = gelu(*v));
        let mut h = self.layers[1].forward_rows(&h);
        h.apply(|v| *v = gelu(*v));
        self.layers[2].forward_rows(&h)
    }
}

/// Projections and update MLP of one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub mlp: Mlp,
}

impl AttentionWeights {
    /// All zeros: the layer is the identity map.
    pub fn zeros(d: usize) -> Self {
        Self {
            w_q: DMatrix::zeros(d, d),
            w_k: DMatrix::zeros(d, d),
            w_v: DMatrix::zeros(d, d),
            mlp: Mlp::zeros(d),
        }
    }

    /// Identity projections with a zero MLP; attention is computed but the
    /// update vanishes.
    pub fn passthrough(d: usize) -> Self {
        Self {
            w_q: DMatrix::identity(d, d),
            w_k: DMatrix::identity(d, d),
            w_v: DMatrix::identity(d, d),
            mlp: Mlp::zeros(d),
        }
    }

    /// Every entry drawn from uniform(−1/√d, 1/√d).
    pub fn random(d: usize, rng: &mut impl Rng) -> Self {
        let b = 1.0 / (d as f64).sqrt();
        let mut square = || DMatrix::from_fn(d, d, |_, _| rng.random_range(-b..b));
        let (w_q, w_k, w_v) = (square(), square(), square());
        let mlp = Mlp {
            layers: [
                Linear::random(2 * d, d, b, rng),
                Linear::random(d, d, b, rng),
                Linear::random(d, d, b, rng),
            ],
        };
        Self { w_q, w_k, w_v, mlp }
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        for m in [&self.w_q, &self.w_k, &self.w_v] {
            if m.shape() != (d, d) {
                return Err(Error::ShapeMismatch(format!(
                    "projection is {}×{}, expected {d}×{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let widths = [(2 * d, d), (d, d), (d, d)];
        for (layer, (input, output)) in self.mlp.layers.iter().zip(widths) {
            if layer.input_dim() != input || layer.output_dim() != output || layer.bias.len() != output {
                return Err(Error::ShapeMismatch(format!(
                    "mlp layer is {}→{}, expected {input}→{output}",
                    layer.input_dim(),
                    layer.output_dim()
                )));
            }
        }
        let finite = [&self.w_q, &self.w_k, &self.w_v]
            .into_iter()
            .chain(self.mlp.layers.iter().map(|l| &l.weight))
            .all(|m| m.iter().all(|v| v.is_finite()))
            && self.mlp.layers.iter().all(|l| l.bias.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidParameter("weights must be finite".into()));
        }
        Ok(())
    }
}

/// Self-attention and cross-attention weights of one transformer block,
/// shared by both clouds.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeights {
    pub self_attn: AttentionWeights,
    pub cross_attn: AttentionWeights,
}

impl TransformerWeights {
    pub fn zeros(d: usize) -> Self {
        Self {
            self_attn: AttentionWeights::zeros(d),
            cross_attn: AttentionWeights::zeros(d),
        }
    }

    pub fn passthrough(d: usize) -> Self {
        Self {
            self_attn: AttentionWeights::passthrough(d),
            cross_attn: AttentionWeights::passthrough(d),
        }
    }

    pub fn random(d: usize, rng: &mut impl Rng) -> Self {
        let self_attn = AttentionWeights::random(d, rng);
        let cross_attn = AttentionWeights::random(d, rng);
        Self { self_attn, cross_attn }
    }

    pub fn seeded(d: usize, seed: u64) -> Self {
        Self::random(d, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

fn softmax_rows_in_place(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Row-stochastic attention matrix `softmax(q kᵀ / √d)` with rotary-encoded
/// queries and keys.
pub fn attention_matrix(
    features_q: &FeatureMatrix,
    positions_q: &PointCloud,
    features_kv: &FeatureMatrix,
    positions_kv: &PointCloud,
    weights: &AttentionWeights,
    config: &EncodingConfig,
) -> Result<DMatrix<f64>> {
    check_features(features_q, positions_q.len(), config)?;
    check_features(features_kv, positions_kv.len(), config)?;
    weights.validate(config.dim)?;
    let mut q = features_q * weights.w_q.transpose();
    encode_rows(&mut q, positions_q.points(), config)?;
    scaled_attention(&q, features_kv, positions_kv, weights, config)
}

fn scaled_attention(
    q_encoded: &DMatrix<f64>,
    features_kv: &FeatureMatrix,
    positions_kv: &PointCloud,
    weights: &AttentionWeights,
    config: &EncodingConfig,
) -> Result<DMatrix<f64>> {
    let mut k = features_kv * weights.w_k.transpose();
    encode_rows(&mut k, positions_kv.points(), config)?;
    let mut a = q_encoded * k.transpose() / (config.dim as f64).sqrt();
    softmax_rows_in_place(&mut a);
    Ok(a)
}

/// `x_i ← x_i + MLP(cat[W_q x_i, Σ_j a_ij W_v x_j])` where
/// `a_ij = softmax_j(⟨Θ(p_i) W_q x_i, Θ(p_j) W_k x_j⟩ / √d)`.
///
/// The concatenated query is the projection before encoding, so the
/// update sees positions only through the attention weights.
pub fn cross_attention(
    features_q: &FeatureMatrix,
    positions_q: &PointCloud,
    features_kv: &FeatureMatrix,
    positions_kv: &PointCloud,
    weights: &AttentionWeights,
    config: &EncodingConfig,
) -> Result<FeatureMatrix> {
    check_features(features_q, positions_q.len(), config)?;
    check_features(features_kv, positions_kv.len(), config)?;
    weights.validate(config.dim)?;
    let d = config.dim;
    let n = features_q.nrows();
    if n == 0 {
        return Ok(features_q.clone());
    }
    if features_kv.nrows() == 0 {
        return Err(Error::EmptyInput("attention needs at least one key"));
    }

    let q = features_q * weights.w_q.transpose();
    let mut q_encoded = q.clone();
    encode_rows(&mut q_encoded, positions_q.points(), config)?;
    let a = scaled_attention(&q_encoded, features_kv, positions_kv, weights, config)?;
    let v = features_kv * weights.w_v.transpose();
    let message = a * v;

    let mut input = DMatrix::zeros(n, 2 * d);
    input.columns_mut(0, d).copy_from(&q);
    input.columns_mut(d, d).copy_from(&message);
    Ok(features_q + weights.mlp.forward_rows(&input))
}

pub fn self_attention(
    features: &FeatureMatrix,
    positions: &PointCloud,
    weights: &AttentionWeights,
    config: &EncodingConfig,
) -> Result<FeatureMatrix> {
    cross_attention(features, positions, features, positions, weights, config)
}

/// Self attention on each cloud, then cross attention both ways.
///
/// Both cross directions read the self-attended features of the other
/// cloud, so the result does not depend on an update order.
pub fn transformer_block(
    features_s: &FeatureMatrix,
    positions_s: &PointCloud,
    features_t: &FeatureMatrix,
    positions_t: &PointCloud,
    weights: &TransformerWeights,
    config: &EncodingConfig,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let s = self_attention(features_s, positions_s, &weights.self_attn, config)?;
    let t = self_attention(features_t, positions_t, &weights.self_attn, config)?;
    let s_out = cross_attention(&s, positions_s, &t, positions_t, &weights.cross_attn, config)?;
    let t_out = cross_attention(&t, positions_t, &s, positions_s, &weights.cross_attn, config)?;
    Ok((s_out, t_out))
}
