//! Two Transformer–Matching–Procrustes passes with source repositioning
//! between them.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    matching_loss, total_loss, transformer_block, warping_loss, FeatureMatrix, LossConfig, TransformerWeights,
};
use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, PointCloud, WarpFunction};
use crate::matching::{dual_softmax, score_matrix, select_matches, top_soft_matches, ConfidenceMatrix, MatchConfig};
use crate::procrustes::{reposition, soft_procrustes, RigidTransform};
use crate::rope::EncodingConfig;

pub const TMP_LAYERS: usize = 2;

/// Weights of one TMP pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub transformer: TransformerWeights,
    pub w_s: DMatrix<f64>,
    pub w_t: DMatrix<f64>,
}

impl LayerWeights {
    pub fn passthrough(d: usize) -> Self {
        Self {
            transformer: TransformerWeights::passthrough(d),
            w_s: DMatrix::identity(d, d),
            w_t: DMatrix::identity(d, d),
        }
    }

    pub fn random(d: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let transformer = TransformerWeights::random(d, rng);
        let b = 1.0 / (d as f64).sqrt();
        let w_s = DMatrix::from_fn(d, d, |_, _| rng.random_range(-b..b));
        let w_t = DMatrix::from_fn(d, d, |_, _| rng.random_range(-b..b));
        Self { transformer, w_s, w_t }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        self.transformer.self_attn.validate(d)?;
        self.transformer.cross_attn.validate(d)?;
        for w in [&self.w_s, &self.w_t] {
            if w.shape() != (d, d) {
                return Err(Error::ShapeMismatch(format!(
                    "matching projection is {}×{}, expected {d}×{d}",
                    w.nrows(),
                    w.ncols()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineWeights {
    pub layers: [LayerWeights; TMP_LAYERS],
}

impl PipelineWeights {
    /// Identity projections and zero MLPs: features pass through unchanged
    /// and matching scores are plain position-coded dot products.
    pub fn passthrough(d: usize) -> Self {
        Self {
            layers: [LayerWeights::passthrough(d), LayerWeights::passthrough(d)],
        }
    }

    /// Seeded uniform(−1/√d, 1/√d) initialization.
    pub fn seeded(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = LayerWeights::random(d, &mut rng);
        let second = LayerWeights::random(d, &mut rng);
        Self {
            layers: [first, second],
        }
    }

    pub fn dim(&self) -> usize {
        self.layers[0].w_s.nrows()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.validate(d))
    }
}

/// Supervision for the loss terms.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub warp: WarpFunction,
    pub correspondences: CorrespondenceSet,
    /// Source ids entering the warping loss.
    pub overlap_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOptions {
    pub encoding: EncodingConfig,
    pub matching: MatchConfig,
    pub loss: LossConfig,
    /// When false the second pass reuses the original source positions.
    pub reposition: bool,
}

impl PipelineOptions {
    pub fn new(encoding: EncodingConfig, matching: MatchConfig, loss: LossConfig) -> Self {
        Self {
            encoding,
            matching,
            loss,
            reposition: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerLoss {
    pub matching: f64,
    pub warping: f64,
}

#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub confidence: ConfidenceMatrix,
    /// The top-n̂ weighted matches fed to Procrustes.
    pub soft_matches: CorrespondenceSet,
    /// Thresholded matches of this layer.
    pub matches: CorrespondenceSet,
    pub transform: RigidTransform,
    /// The fit failed and `transform` is the identity.
    pub degenerate: bool,
    pub loss: Option<LayerLoss>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// Final matches, selected from the second layer.
    pub matches: CorrespondenceSet,
    pub layers: Vec<LayerOutput>,
    /// Source positions used by the second pass.
    pub repositioned: PointCloud,
}

impl PipelineOutput {
    pub fn total_loss(&self, lambda_w: f64) -> Result<f64> {
        let losses: Vec<LayerLoss> = self
            .layers
            .iter()
            .map(|l| l.loss.ok_or(Error::MissingGroundTruth))
            .collect::<Result<_>>()?;
        Ok(total_loss(
            [losses[0].matching, losses[1].matching],
            [losses[0].warping, losses[1].warping],
            lambda_w,
        ))
    }
}

struct Pass {
    features_s: FeatureMatrix,
    features_t: FeatureMatrix,
    output: LayerOutput,
}

#[allow(clippy::too_many_arguments)]
fn tmp_pass(
    layer: &LayerWeights,
    source: &PointCloud,
    positions_s: &PointCloud,
    target: &PointCloud,
    features_s: &FeatureMatrix,
    features_t: &FeatureMatrix,
    options: &PipelineOptions,
    gt: Option<&GroundTruth>,
    tolerate_degenerate: bool,
) -> Result<Pass> {
    let enc = &options.encoding;
    let (fs, ft) = transformer_block(features_s, positions_s, features_t, target, &layer.transformer, enc)?;
    let scores = score_matrix(&fs, positions_s, &ft, target, &layer.w_s, &layer.w_t, enc)?;
    let confidence = dual_softmax(&scores);
    let soft_matches = top_soft_matches(&confidence, source.len())?;
    // The fit pairs original source coordinates with the target, so it is
    // the full source-to-target motion whatever positions the pass used.
    let (transform, degenerate) = match soft_procrustes(&soft_matches, source, target) {
        Ok(t) => (t, false),
        Err(e @ (Error::DegenerateConfiguration | Error::TooFewCorrespondences { .. })) if tolerate_degenerate => {
            log::warn!("first-pass fit failed ({e}); keeping original source positions");
            (RigidTransform::identity(), true)
        }
        Err(e) => return Err(e),
    };
    let matches = select_matches(&confidence, &options.matching)?;
    let loss = match gt {
        Some(gt) => Some(LayerLoss {
            matching: matching_loss(&confidence, &gt.correspondences, &options.loss)?.value,
            warping: warping_loss(source, &transform, &gt.warp, &gt.overlap_ids)?,
        }),
        None => None,
    };
    Ok(Pass {
        features_s: fs,
        features_t: ft,
        output: LayerOutput {
            confidence,
            soft_matches,
            matches,
            transform,
            degenerate,
            loss,
        },
    })
}

/// Runs both TMP passes.
///
/// The second pass takes the first pass's transformer outputs and the
/// source positions moved by the first-pass fit.
pub fn run_pipeline(
    source: &PointCloud,
    target: &PointCloud,
    features_s: &FeatureMatrix,
    features_t: &FeatureMatrix,
    weights: &PipelineWeights,
    options: &PipelineOptions,
    gt: Option<&GroundTruth>,
) -> Result<PipelineOutput> {
    options.encoding.validate()?;
    options.matching.validate()?;
    weights.validate(options.encoding.dim)?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("pipeline needs non-empty clouds"));
    }

    let first = tmp_pass(
        &weights.layers[0],
        source,
        source,
        target,
        features_s,
        features_t,
        options,
        gt,
        true,
    )?;
    let repositioned = if options.reposition && !first.output.degenerate {
        reposition(source, &first.output.transform)
    } else {
        source.clone()
    };
    let second = tmp_pass(
        &weights.layers[1],
        source,
        &repositioned,
        target,
        &first.features_s,
        &first.features_t,
        options,
        gt,
        false,
    )?;
    Ok(PipelineOutput {
        matches: second.output.matches.clone(),
        layers: vec![first.output, second.output],
        repositioned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, Vector3};
    use rand::Rng;

    fn grid_cloud(n: usize) -> PointCloud {
        let side = (n as f64).sqrt().ceil() as usize;
        PointCloud::from(
            (0..n)
                .map(|k| {
                    let (i, j) = ((k / side) as f64, (k % side) as f64);
                    Point3::new(0.1 * i, 0.1 * j, 0.02 * (i * j).sin())
                })
                .collect::<Vec<_>>(),
        )
    }

    /// Distinct random unit rows, one per point.
    fn hashed_features(n: usize, d: usize, seed: u64, scale: f64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        for mut row in x.row_iter_mut() {
            let norm = row.norm();
            row *= scale / norm;
        }
        x
    }

    fn options(d: usize) -> PipelineOptions {
        PipelineOptions::new(EncodingConfig::new(d).unwrap(), MatchConfig::deformable(), LossConfig::rigid())
    }

    #[test]
    fn self_pair_yields_identity() {
        let d = 48;
        let s = grid_cloud(25);
        let x = hashed_features(25, d, 1, 30.0);
        let out = run_pipeline(&s, &s, &x, &x, &PipelineWeights::passthrough(d), &options(d), None).unwrap();
        assert_eq!(out.layers.len(), 2);
        let t1 = &out.layers[0].transform;
        assert!(t1.rotation_angle_to(&RigidTransform::identity()) < 1e-6);
        assert!(t1.translation.norm() < 1e-6);
        let pairs: Vec<(usize, usize)> = out.matches.iter().map(|c| (c.source, c.target)).collect();
        assert_eq!(pairs, (0..25).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(out.layers[0].soft_matches.len(), 25);
        assert!(out.total_loss(0.1).is_err());
    }

    #[test]
    fn deterministic() {
        let d = 12;
        let s = grid_cloud(16);
        let t = s.translated(&Vector3::new(0.05, 0.0, 0.0));
        let xs = hashed_features(16, d, 2, 3.0);
        let xt = hashed_features(16, d, 3, 3.0);
        let w = PipelineWeights::seeded(d, 9);
        let a = run_pipeline(&s, &t, &xs, &xt, &w, &options(d), None).unwrap();
        let b = run_pipeline(&s, &t, &xs, &xt, &w, &options(d), None).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.confidence, lb.confidence);
            assert_eq!(la.transform, lb.transform);
        }
        assert_eq!(a.matches, b.matches);
    }

    #[test]
    fn repositioning_only_moves_positions() {
        let d = 12;
        let s = grid_cloud(16);
        let shift = Vector3::new(0.3, -0.1, 0.2);
        let t = s.translated(&shift);
        let x = hashed_features(16, d, 4, 5.0);
        let mut opts = options(d);
        let w = PipelineWeights::passthrough(d);
        let with = run_pipeline(&s, &t, &x, &x, &w, &opts, None).unwrap();
        opts.reposition = false;
        let without = run_pipeline(&s, &t, &x, &x, &w, &opts, None).unwrap();
        assert_eq!(without.repositioned, s);
        assert_eq!(with.layers[0].confidence, without.layers[0].confidence);
        // Layer-2 scores recomputed by hand from the repositioned codes.
        let enc = &opts.encoding;
        let scores = score_matrix(&x, &with.repositioned, &x, &t, &w.layers[1].w_s, &w.layers[1].w_t, enc).unwrap();
        assert_eq!(&dual_softmax(&scores), &with.layers[1].confidence);
    }

    #[test]
    fn losses_with_ground_truth() {
        let d = 48;
        let s = grid_cloud(25);
        let x = hashed_features(25, d, 5, 30.0);
        let gt = GroundTruth {
            warp: WarpFunction::identity(),
            correspondences: CorrespondenceSet::identity(25),
            overlap_ids: (0..25).collect(),
        };
        let out = run_pipeline(&s, &s, &x, &x, &PipelineWeights::passthrough(d), &options(d), Some(&gt)).unwrap();
        let l0 = out.layers[0].loss.unwrap();
        let l1 = out.layers[1].loss.unwrap();
        let total = out.total_loss(0.0).unwrap();
        assert!((total - (l0.matching + l1.matching)).abs() < 1e-15);
        assert!((0.0..1e-6).contains(&total));
        assert!(l0.warping < 1e-6);
    }

    #[test]
    fn two_point_source_fails_in_second_pass() {
        let d = 6;
        let s = PointCloud::from(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]);
        let x = hashed_features(2, d, 6, 1.0);
        let out = run_pipeline(&s, &s, &x, &x, &PipelineWeights::passthrough(d), &options(d), None);
        // Two source points cannot pin a rotation in the second pass either.
        assert!(out.is_err());
    }
}
