//! Correspondence and registration metrics: IR, NFMR, FMR, RR, EPE/Acc.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, KdTree, Point3, PointCloud, Vector3, WarpFunction};
use crate::procrustes::RigidTransform;

/// Anchors closer than this to a query pass their flow through unchanged.
pub const COINCIDENCE_DISTANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// Inlier tolerance σ for IR, meters.
    pub sigma_inlier: f64,
    /// NFMR tolerance, meters.
    pub nfmr_sigma: f64,
    /// A pair counts toward FMR when its IR exceeds this.
    pub fmr_ir_threshold: f64,
    /// A pair counts toward RR when its GT RMSE is below this, meters.
    pub rr_rmse_threshold: f64,
    /// Anchors used by flow interpolation.
    pub knn_k: usize,
    /// Absolute EPE thresholds for Acc5 / Acc10, meters.
    pub acc_abs: [f64; 2],
    /// Relative EPE thresholds for Acc5 / Acc10.
    pub acc_rel: [f64; 2],
}

impl MetricConfig {
    pub fn rigid() -> Self {
        Self {
            sigma_inlier: 0.1,
            nfmr_sigma: 0.04,
            fmr_ir_threshold: 0.05,
            rr_rmse_threshold: 0.2,
            knn_k: 3,
            acc_abs: [0.05, 0.1],
            acc_rel: [0.05, 0.1],
        }
    }

    pub fn deformable() -> Self {
        Self {
            sigma_inlier: 0.04,
            ..Self::rigid()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.sigma_inlier, self.nfmr_sigma, self.fmr_ir_threshold, self.rr_rmse_threshold]
            .into_iter()
            .chain(self.acc_abs)
            .chain(self.acc_rel)
            .all(|v| v > 0.0);
        if !positive || self.knn_k == 0 {
            return Err(Error::InvalidParameter("metric thresholds must be positive".into()));
        }
        Ok(())
    }
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self::rigid()
    }
}

/// Fraction of predicted pairs `(p, q)` with `‖W_gt(p) − q‖ < σ`.
pub fn inlier_ratio(
    k_pred: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
    warp_gt: &WarpFunction,
    sigma: f64,
) -> Result<f64> {
    if k_pred.is_empty() {
        log::warn!("inlier ratio of an empty match set is zero");
        return Ok(0.0);
    }
    k_pred.validate(source.len(), target.len())?;
    let mut inliers = 0usize;
    for c in k_pred.iter() {
        let w = warp_gt.apply_source(c.source, &source[c.source])?;
        if (w - target[c.target]).norm() < sigma {
            inliers += 1;
        }
    }
    Ok(inliers as f64 / k_pred.len() as f64)
}

/// Sparse scene flow `F` at anchors `A`, interpolated by inverse distance.
#[derive(Clone, Debug)]
pub struct FlowInterpolator {
    tree: KdTree,
    flows: Vec<Vector3>,
    k: usize,
}

impl FlowInterpolator {
    pub fn new(anchors: &[Point3], flows: &[Vector3], k: usize) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::EmptyInput("flow interpolation needs anchors"));
        }
        if anchors.len() != flows.len() {
            return Err(Error::DimensionMismatch {
                expected: anchors.len(),
                actual: flows.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(Self {
            tree: KdTree::new(anchors),
            flows: flows.to_vec(),
            k,
        })
    }

    /// `Σ_i w_i F_i / Σ_i w_i` over the k nearest anchors, `w_i = 1/‖u − A_i‖`.
    pub fn flow_at(&self, u: &Point3) -> Vector3 {
        let neighbors = self.tree.knn(u, self.k);
        if let Some(hit) = neighbors.iter().find(|n| n.distance < COINCIDENCE_DISTANCE) {
            return self.flows[hit.id];
        }
        let mut num = Vector3::zeros();
        let mut den = 0.0;
        for n in &neighbors {
            let w = 1.0 / n.distance;
            num += w * self.flows[n.id];
            den += w;
        }
        num / den
    }
}

pub fn scene_flow_interpolate(u: &Point3, anchors: &[Point3], flows: &[Vector3], k: usize) -> Result<Vector3> {
    Ok(FlowInterpolator::new(anchors, flows, k)?.flow_at(u))
}

/// Fraction of ground-truth pairs `(u, v)` recovered by propagating the
/// predicted flow: `‖u + Γ(u) − v‖ < σ`.
pub fn nfmr(
    k_pred: &CorrespondenceSet,
    k_gt: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
    sigma: f64,
    k: usize,
) -> Result<f64> {
    if k_gt.is_empty() {
        return Err(Error::EmptyInput("NFMR needs ground-truth pairs"));
    }
    k_gt.validate(source.len(), target.len())?;
    if k_pred.is_empty() {
        return Ok(0.0);
    }
    k_pred.validate(source.len(), target.len())?;
    let anchors: Vec<Point3> = k_pred.iter().map(|c| source[c.source]).collect();
    let flows: Vec<Vector3> = k_pred.iter().map(|c| target[c.target] - source[c.source]).collect();
    let interp = FlowInterpolator::new(&anchors, &flows, k)?;
    let recalled = k_gt
        .iter()
        .filter(|c| {
            let u = source[c.source];
            (u + interp.flow_at(&u) - target[c.target]).norm() < sigma
        })
        .count();
    Ok(recalled as f64 / k_gt.len() as f64)
}

/// Fraction of pairs whose inlier ratio is strictly above `threshold`.
pub fn feature_matching_recall(inlier_ratios: &[f64], threshold: f64) -> Result<f64> {
    if inlier_ratios.is_empty() {
        return Err(Error::EmptyInput("FMR needs at least one pair"));
    }
    let hits = inlier_ratios.iter().filter(|ir| **ir > threshold).count();
    Ok(hits as f64 / inlier_ratios.len() as f64)
}

/// `sqrt(mean ‖R p + t − q‖²)` over ground-truth point pairs.
pub fn correspondence_rmse(transform: &RigidTransform, pairs: &[(Point3, Point3)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("RMSE needs ground-truth pairs"));
    }
    let sq: f64 = pairs.iter().map(|(p, q)| (transform.apply(p) - q).norm_squared()).sum();
    Ok((sq / pairs.len() as f64).sqrt())
}

/// Fraction of pairs whose estimate brings the GT pairs within `threshold` RMSE.
pub fn registration_recall(
    estimates: &[RigidTransform],
    gt_pairs: &[Vec<(Point3, Point3)>],
    threshold: f64,
) -> Result<f64> {
    if estimates.len() != gt_pairs.len() {
        return Err(Error::DimensionMismatch {
            expected: gt_pairs.len(),
            actual: estimates.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::EmptyInput("RR needs at least one pair"));
    }
    let mut hits = 0usize;
    for (t, pairs) in estimates.iter().zip(gt_pairs) {
        if correspondence_rmse(t, pairs)? < threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / estimates.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub epe: f64,
    pub acc5: f64,
    pub acc10: f64,
}

/// End-point error and the two accuracy levels. A flow counts as accurate
/// when its error is below the absolute threshold or below the relative
/// threshold times the true flow norm; zero true flows use the absolute test.
pub fn flow_metrics(pred: &[Vector3], gt: &[Vector3], config: &MetricConfig) -> Result<FlowMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("flow metrics need at least one flow"));
    }
    let accurate = |err: f64, norm: f64, level: usize| {
        err < config.acc_abs[level] || (norm > 0.0 && err / norm < config.acc_rel[level])
    };
    let (mut epe, mut a5, mut a10) = (0.0, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        let err = (p - g).norm();
        let norm = g.norm();
        epe += err;
        a5 += usize::from(accurate(err, norm, 0));
        a10 += usize::from(accurate(err, norm, 1));
    }
    let n = pred.len() as f64;
    Ok(FlowMetrics {
        epe: epe / n,
        acc5: a5 as f64 / n,
        acc10: a10 as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Correspondence;

    fn line(n: usize) -> PointCloud {
        PointCloud::from((0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect::<Vec<_>>())
    }

    #[test]
    fn inlier_ratio_examples() {
        let s = line(5);
        let shift = Vector3::new(0.0, 0.0, 0.2);
        let t = s.translated(&shift);
        let gt = WarpFunction::Rigid(RigidTransform::from_translation(shift));
        let all = CorrespondenceSet::identity(5);
        assert_eq!(inlier_ratio(&all, &s, &t, &gt, 0.1).unwrap(), 1.0);
        // Off by 2σ everywhere.
        let far = s.translated(&(shift + Vector3::new(0.0, 0.2, 0.0)));
        assert_eq!(inlier_ratio(&all, &s, &far, &gt, 0.1).unwrap(), 0.0);
        // Three correct, two pointing at the wrong neighbour.
        let mixed = CorrespondenceSet::new(vec![
            Correspondence::new(0, 0, 1.0),
            Correspondence::new(1, 1, 1.0),
            Correspondence::new(2, 2, 1.0),
            Correspondence::new(3, 4, 1.0),
            Correspondence::new(4, 3, 1.0),
        ]);
        assert!((inlier_ratio(&mixed, &s, &t, &gt, 0.1).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(inlier_ratio(&CorrespondenceSet::default(), &s, &t, &gt, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn interpolation_examples() {
        let anchors = [Point3::new(-1.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let flows = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 3.0, 0.0)];
        let mid = scene_flow_interpolate(&Point3::origin(), &anchors, &flows, 3).unwrap();
        assert!((mid - Vector3::new(0.5, 1.5, 0.0)).norm() < 1e-15);
        let at = scene_flow_interpolate(&anchors[1], &anchors, &flows, 3).unwrap();
        assert_eq!(at, flows[1]);
        assert!(scene_flow_interpolate(&Point3::origin(), &[], &[], 3).is_err());
    }

    #[test]
    fn interpolation_direct_formula() {
        let anchors = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 2.0, 0.0),
            Point3::new(5.0, 5.0, 5.0),
        ];
        let flows = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(9.0, 9.0, 9.0),
        ];
        let u = Point3::new(0.3, 0.4, 0.0);
        let w: Vec<f64> = anchors[..3].iter().map(|a| 1.0 / (u - a).norm()).collect();
        let total: f64 = w.iter().sum();
        let want = (w[0] * flows[0] + w[1] * flows[1] + w[2] * flows[2]) / total;
        let got = scene_flow_interpolate(&u, &anchors, &flows, 3).unwrap();
        assert!((got - want).norm() < 1e-15);
    }

    #[test]
    fn nfmr_examples() {
        let s = line(6);
        let t = s.translated(&Vector3::new(0.0, 1.0, 0.0));
        let gt = CorrespondenceSet::identity(6);
        assert_eq!(nfmr(&gt, &gt, &s, &t, 0.04, 3).unwrap(), 1.0);
        assert_eq!(nfmr(&CorrespondenceSet::default(), &gt, &s, &t, 0.04, 3).unwrap(), 0.0);
        assert!(nfmr(&gt, &CorrespondenceSet::default(), &s, &t, 0.04, 3).is_err());
        // Uniform flow: half the GT as predictions recovers everything.
        let half: CorrespondenceSet = gt.iter().step_by(2).copied().collect();
        assert_eq!(nfmr(&half, &gt, &s, &t, 0.04, 3).unwrap(), 1.0);
    }

    #[test]
    fn fmr_examples() {
        assert_eq!(feature_matching_recall(&[1.0, 1.0], 0.05).unwrap(), 1.0);
        assert_eq!(feature_matching_recall(&[0.04, 0.06], 0.05).unwrap(), 0.5);
        assert_eq!(feature_matching_recall(&[0.05], 0.05).unwrap(), 0.0);
        assert!(feature_matching_recall(&[], 0.05).is_err());
    }

    #[test]
    fn registration_recall_examples() {
        let pairs: Vec<(Point3, Point3)> = line(4).iter().map(|p| (*p, p + Vector3::new(1.0, 0.0, 0.0))).collect();
        let exact = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(registration_recall(&[exact], std::slice::from_ref(&pairs), 0.2).unwrap(), 1.0);
        assert_eq!(correspondence_rmse(&RigidTransform::identity(), &pairs).unwrap(), 1.0);
        assert_eq!(registration_recall(&[RigidTransform::identity()], std::slice::from_ref(&pairs), 0.2).unwrap(), 0.0);
        assert!(registration_recall(&[], &[pairs], 0.2).is_err());
    }

    #[test]
    fn flow_metric_examples() {
        let c = MetricConfig::default();
        let gt = vec![Vector3::new(1.0, 0.0, 0.0); 4];
        let m = flow_metrics(&gt, &gt, &c).unwrap();
        assert_eq!((m.epe, m.acc5, m.acc10), (0.0, 1.0, 1.0));
        let off: Vec<Vector3> = gt.iter().map(|g| g + Vector3::new(0.0, 0.07, 0.0)).collect();
        let m = flow_metrics(&off, &gt, &c).unwrap();
        assert!((m.epe - 0.07).abs() < 1e-15);
        assert_eq!((m.acc5, m.acc10), (0.0, 1.0));
        let off: Vec<Vector3> = gt.iter().map(|g| g + Vector3::new(0.0, 0.2, 0.0)).collect();
        let m = flow_metrics(&off, &gt, &c).unwrap();
        assert_eq!((m.acc5, m.acc10), (0.0, 0.0));
        // Zero true flow: absolute test only.
        let m = flow_metrics(&[Vector3::new(0.03, 0.0, 0.0)], &[Vector3::zeros()], &c).unwrap();
        assert_eq!((m.acc5, m.acc10), (1.0, 1.0));
    }

    #[test]
    fn presets() {
        assert_eq!(MetricConfig::rigid().sigma_inlier, 0.1);
        assert_eq!(MetricConfig::deformable().sigma_inlier, 0.04);
        assert_eq!(MetricConfig::rigid().nfmr_sigma, 0.04);
        MetricConfig::rigid().validate().unwrap();
    }
}
