//! Rotary 3D positional encoding.
//!
//! The encoding of a point `p = (x, y, z)` is a block-diagonal rotation with
//! `d / 6` blocks. Block `k` (zero based) occupies channels `6k..6k + 6` and
//! rotates the channel pairs `(6k, 6k+1)`, `(6k+2, 6k+3)`, `(6k+4, 6k+5)` by
//! the angles `x θ_k`, `y θ_k`, `z θ_k`, with `θ_k = base^(-6k/d)`.
//!
//! Because every block is a rotation, the encoded dot product only depends
//! on the relative position: `<Θ(p)a, Θ(q)b> = aᵀ Θ(q - p) b`.
//!
//! Coordinates enter the angles unnormalized, in meters. Clouds with large
//! absolute coordinates should be centered by the caller first, otherwise
//! the high-frequency angles lose precision.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingConfig {
    pub dim: usize,
    #[serde(default = "default_base")]
    pub base: f64,
}

fn default_base() -> f64 {
    DEFAULT_BASE
}

impl EncodingConfig {
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_base(dim, DEFAULT_BASE)
    }

    pub fn with_base(dim: usize, base: f64) -> Result<Self> {
        let config = Self { dim, base };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(6) {
            return Err(Error::DimensionNotMultipleOfSix(self.dim));
        }
        if !(self.base > 1.0 && self.base.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "encoding base must exceed 1, got {}",
                self.base
            )));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Result<Vec<f64>> {
        theta_frequencies(self)
    }
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            dim: 528,
            base: DEFAULT_BASE,
        }
    }
}

/// `θ_k = base^(-6(k-1)/d)` for `k = 1..=d/6`.
pub fn theta_frequencies(config: &EncodingConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let d = config.dim as f64;
    Ok((0..config.dim / 6)
        .map(|k| config.base.powf(-6.0 * k as f64 / d))
        .collect())
}

/// Cosine/sine tables of one point's encoding, laid out channel by channel
/// so that applying it is two element-wise products.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionCode {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PositionCode {
    pub fn new(p: &Point3, config: &EncodingConfig) -> Result<Self> {
        let freqs = theta_frequencies(config)?;
        Ok(Self::from_frequencies(p, &freqs))
    }

    pub(crate) fn from_frequencies(p: &Point3, freqs: &[f64]) -> Self {
        let d = freqs.len() * 6;
        let mut cos = Vec::with_capacity(d);
        let mut sin = Vec::with_capacity(d);
        for &theta in freqs {
            for coord in [p.x, p.y, p.z] {
                let (s, c) = (coord * theta).sin_cos();
                cos.extend([c, c]);
                sin.extend([s, s]);
            }
        }
        Self { cos, sin }
    }

    pub fn dim(&self) -> usize {
        self.cos.len()
    }

    pub fn cos_table(&self) -> &[f64] {
        &self.cos
    }

    pub fn sin_table(&self) -> &[f64] {
        &self.sin
    }

    /// `Θ(p) x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }

    pub fn apply_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        for c in (0..x.len()).step_by(2) {
            let (a, b) = (x[c], x[c + 1]);
            x[c] = a * self.cos[c] - b * self.sin[c];
            x[c + 1] = b * self.cos[c + 1] + a * self.sin[c + 1];
        }
        Ok(())
    }
}

/// Encodes a feature vector at position `p`.
pub fn encode(p: &Point3, x: &[f64], config: &EncodingConfig) -> Result<Vec<f64>> {
    if x.len() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.dim,
            actual: x.len(),
        });
    }
    PositionCode::new(p, config)?.apply(x)
}

/// Encodes every row of an `n × d` matrix with the matching position.
pub fn encode_rows(
    rows: &mut DMatrix<f64>,
    positions: &[Point3],
    config: &EncodingConfig,
) -> Result<()> {
    if rows.ncols() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.dim,
            actual: rows.ncols(),
        });
    }
    if rows.nrows() != positions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} positions",
            rows.nrows(),
            positions.len()
        )));
    }
    let freqs = theta_frequencies(config)?;
    let mut buf = vec![0.0; config.dim];
    for (i, p) in positions.iter().enumerate() {
        let code = PositionCode::from_frequencies(p, &freqs);
        for (c, v) in buf.iter_mut().enumerate() {
            *v = rows[(i, c)];
        }
        code.apply_in_place(&mut buf)?;
        for (c, v) in buf.iter().enumerate() {
            rows[(i, c)] = *v;
        }
    }
    Ok(())
}

/// The dense `d × d` matrix Θ(p). Reference form, O(d²).
pub fn dense_theta(p: &Point3, config: &EncodingConfig) -> Result<DMatrix<f64>> {
    let freqs = theta_frequencies(config)?;
    let mut m = DMatrix::zeros(config.dim, config.dim);
    for (k, &theta) in freqs.iter().enumerate() {
        for (axis, coord) in [p.x, p.y, p.z].into_iter().enumerate() {
            let (s, c) = (coord * theta).sin_cos();
            let r = 6 * k + 2 * axis;
            m[(r, r)] = c;
            m[(r, r + 1)] = -s;
            m[(r + 1, r)] = s;
            m[(r + 1, r + 1)] = c;
        }
    }
    Ok(m)
}

/// `<Θ(p_i) x_i, Θ(p_j) x_j>`.
pub fn relative_dot(
    x_i: &[f64],
    p_i: &Point3,
    x_j: &[f64],
    p_j: &Point3,
    config: &EncodingConfig,
) -> Result<f64> {
    let a = encode(p_i, x_i, config)?;
    let b = encode(p_j, x_j, config)?;
    Ok(a.iter().zip(&b).map(|(u, v)| u * v).sum())
}
