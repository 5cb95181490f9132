//! Pipeline weights as a sequence of matrix records.
//!
//! Per TMP layer, in order: self attention then cross attention, each as
//! `W_q, W_k, W_v, l1.w, l1.b, l2.w, l2.b, l3.w, l3.b`; then `W_S, W_T`.
//! Linear weights are `out × in`, biases `1 × out`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::matrix::MatrixFile;
use crate::attention::{AttentionWeights, Linear, Mlp, TransformerWeights};
use crate::error::{Error, Result};
use crate::pipeline::{LayerWeights, PipelineWeights};

/// Matrix records per TMP layer.
pub const RECORDS_PER_LAYER: usize = 2 * 9 + 2;

fn attention_records(a: &AttentionWeights) -> Vec<DMatrix<f64>> {
    let mut out = vec![a.w_q.clone(), a.w_k.clone(), a.w_v.clone()];
    for l in &a.mlp.layers {
        out.push(l.weight.clone());
        out.push(DMatrix::from_row_slice(1, l.bias.len(), l.bias.as_slice()));
    }
    out
}

pub fn write_weights(writer: &mut impl Write, weights: &PipelineWeights) -> Result<()> {
    for layer in &weights.layers {
        let records = attention_records(&layer.transformer.self_attn)
            .into_iter()
            .chain(attention_records(&layer.transformer.cross_attn))
            .chain([layer.w_s.clone(), layer.w_t.clone()]);
        for m in records {
            MatrixFile::from_matrix(&m).write_to(writer)?;
        }
    }
    Ok(())
}

fn take_attention(records: &mut impl Iterator<Item = DMatrix<f64>>) -> Result<AttentionWeights> {
    let mut next = || records.next().ok_or_else(|| Error::Format("weights file ended early".into()));
    let (w_q, w_k, w_v) = (next()?, next()?, next()?);
    let mut linear = || -> Result<Linear> {
        let weight = next()?;
        let bias = next()?;
        if bias.nrows() != 1 {
            return Err(Error::Format("bias records must be single rows".into()));
        }
        Ok(Linear {
            weight,
            bias: DVector::from_iterator(bias.ncols(), bias.iter().copied()),
        })
    };
    let layers = [linear()?, linear()?, linear()?];
    Ok(AttentionWeights { w_q, w_k, w_v, mlp: Mlp { layers } })
}

/// Reads a weights file and checks every shape against `dim`.
pub fn read_weights(reader: &mut impl Read, dim: usize) -> Result<PipelineWeights> {
    let mut records = Vec::new();
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut cursor = bytes.as_slice();
    while !cursor.is_empty() {
        records.push(MatrixFile::read_from(&mut cursor)?.to_matrix()?);
    }
    if records.len() != 2 * RECORDS_PER_LAYER {
        return Err(Error::Format(format!(
            "weights file holds {} records, expected {}",
            records.len(),
            2 * RECORDS_PER_LAYER
        )));
    }
    let mut it = records.into_iter();
    let mut layer = || -> Result<LayerWeights> {
        let self_attn = take_attention(&mut it)?;
        let cross_attn = take_attention(&mut it)?;
        let w_s = it.next().ok_or_else(|| Error::Format("weights file ended early".into()))?;
        let w_t = it.next().ok_or_else(|| Error::Format("weights file ended early".into()))?;
        Ok(LayerWeights {
            transformer: TransformerWeights { self_attn, cross_attn },
            w_s,
            w_t,
        })
    };
    let weights = PipelineWeights {
        layers: [layer()?, layer()?],
    };
    weights.validate(dim)?;
    Ok(weights)
}

pub fn read_weights_file(path: impl AsRef<Path>, dim: usize) -> Result<PipelineWeights> {
    read_weights(&mut std::fs::File::open(path)?, dim)
}

pub fn write_weights_file(path: impl AsRef<Path>, weights: &PipelineWeights) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_weights(&mut f, weights)?;
    f.flush()?;
    Ok(())
}
