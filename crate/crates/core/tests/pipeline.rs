use posmatch::attention::{total_loss, LossConfig};
use posmatch::geometry::WarpFunction;
use posmatch::matching::MatchConfig;
use posmatch::pipeline::{run_pipeline, GroundTruth, PipelineOptions, PipelineWeights};
use posmatch::rope::EncodingConfig;
use posmatch::synth::{synth_rigid_pair, CoordinateFeatures};
use posmatch::Point3;

fn options(dim: usize) -> PipelineOptions {
    PipelineOptions::new(EncodingConfig::new(dim).unwrap(), MatchConfig::rigid(), LossConfig::deformable())
}

#[test]
fn supervised_run_reports_finite_losses() {
    let pair = synth_rigid_pair(13, 120, 0.5, 0.0).unwrap();
    let features = CoordinateFeatures::new(48, 0.2, 5.0, 1).unwrap();
    let back = pair.transform.inverse();
    let canonical: Vec<Point3> = pair.target.iter().map(|q| back.apply(q)).collect();
    let (fs, ft) = (features.describe(pair.source.points()), features.describe(&canonical));
    let gt = GroundTruth {
        warp: WarpFunction::Rigid(pair.transform),
        correspondences: pair.correspondences.clone(),
        overlap_ids: pair.correspondences.iter().map(|c| c.source).collect(),
    };
    let opts = options(48);
    let out = run_pipeline(&pair.source, &pair.target, &fs, &ft, &PipelineWeights::seeded(48, 2), &opts, Some(&gt)).unwrap();
    assert_eq!(out.layers.len(), 2);
    let losses: Vec<_> = out.layers.iter().map(|l| l.loss.unwrap()).collect();
    assert!(losses.iter().all(|l| l.matching.is_finite() && l.matching >= 0.0 && l.warping >= 0.0));
    let expected = total_loss(
        [losses[0].matching, losses[1].matching],
        [losses[0].warping, losses[1].warping],
        opts.loss.lambda_w,
    );
    assert_eq!(out.total_loss(opts.loss.lambda_w).unwrap(), expected);

    let unsupervised = run_pipeline(&pair.source, &pair.target, &fs, &ft, &PipelineWeights::seeded(48, 2), &opts, None).unwrap();
    assert!(unsupervised.total_loss(0.1).is_err());
    assert_eq!(unsupervised.matches, out.matches);
}

#[test]
fn repositioning_can_be_disabled() {
    let pair = synth_rigid_pair(14, 100, 0.5, 0.0).unwrap();
    let features = CoordinateFeatures::new(48, 0.2, 5.0, 1).unwrap();
    let fs = features.describe(pair.source.points());
    let ft = features.describe(pair.target.points());
    let mut opts = options(48);
    opts.reposition = false;
    let out = run_pipeline(&pair.source, &pair.target, &fs, &ft, &PipelineWeights::passthrough(48), &opts, None).unwrap();
    assert_eq!(out.repositioned, pair.source);
}
