use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, PointCloud, WarpFunction};
use crate::matching::ConfidenceMatrix;
use crate::procrustes::RigidTransform;

/// Confidences at ground-truth pairs are clamped to this before the log.
pub const CONFIDENCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Focal weight α.
    pub alpha: f64,
    /// Focal exponent γ.
    pub gamma_focal: f64,
    /// Weight of the warping loss.
    pub lambda_w: f64,
}

impl LossConfig {
    pub fn rigid() -> Self {
        Self {
            alpha: 0.25,
            gamma_focal: 2.0,
            lambda_w: 0.0,
        }
    }

    pub fn deformable() -> Self {
        Self {
            lambda_w: 0.1,
            ..Self::rigid()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter("alpha must lie in (0, 1)".into()));
        }
        if !(self.gamma_focal >= 0.0) || !(self.lambda_w >= 0.0) {
            return Err(Error::InvalidParameter("gamma_focal and lambda_w must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::rigid()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchingLoss {
    pub value: f64,
    /// Ground-truth pairs whose confidence was zero and got clamped.
    pub clamped: usize,
}

/// Focal loss `−(1/|K_gt|) Σ α (1 − C)^γ log C` over ground-truth pairs.
pub fn matching_loss(
    confidence: &ConfidenceMatrix,
    k_gt: &CorrespondenceSet,
    config: &LossConfig,
) -> Result<MatchingLoss> {
    config.validate()?;
    if k_gt.is_empty() {
        return Err(Error::EmptyInput("matching loss needs ground-truth pairs"));
    }
    k_gt.validate(confidence.nrows(), confidence.ncols())?;
    let mut clamped = 0;
    let mut sum = 0.0;
    for pair in k_gt.iter() {
        let mut c = confidence.get(pair.source, pair.target);
        if c < CONFIDENCE_FLOOR {
            clamped += 1;
            c = CONFIDENCE_FLOOR;
        }
        sum += -config.alpha * (1.0 - c).powf(config.gamma_focal) * c.ln();
    }
    if clamped > 0 {
        log::warn!("{clamped} ground-truth confidences were zero and clamped to {CONFIDENCE_FLOOR}");
    }
    Ok(MatchingLoss {
        value: sum / k_gt.len() as f64,
        clamped,
    })
}

/// Mean L1 distance `|W_gt(Ŝ_i) − R Ŝ_i − t|` over the overlap ids.
pub fn warping_loss(
    source: &PointCloud,
    transform: &RigidTransform,
    warp_gt: &WarpFunction,
    overlap_ids: &[usize],
) -> Result<f64> {
    if overlap_ids.is_empty() {
        log::warn!("warping loss over an empty overlap set is zero");
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &i in overlap_ids {
        let p = source.point(i)?;
        let d = warp_gt.apply_source(i, p)? - transform.apply(p);
        sum += d.abs().sum();
    }
    Ok(sum / overlap_ids.len() as f64)
}

/// `(L_m¹ + L_m²) + λ_w (L_w¹ + L_w²)`.
pub fn total_loss(matching: [f64; 2], warping: [f64; 2], lambda_w: f64) -> f64 {
    matching[0] + matching[1] + lambda_w * (warping[0] + warping[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Correspondence, Point3, Vector3};
    use nalgebra::DMatrix;

    fn conf(values: DMatrix<f64>) -> ConfidenceMatrix {
        ConfidenceMatrix::from_values(values).unwrap()
    }

    #[test]
    fn perfect_confidence_gives_zero() {
        let c = conf(DMatrix::identity(3, 3));
        let l = matching_loss(&c, &CorrespondenceSet::identity(3), &LossConfig::default()).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.clamped, 0);
    }

    #[test]
    fn half_confidence_single_pair() {
        let c = conf(DMatrix::from_element(1, 1, 0.5));
        let l = matching_loss(&c, &CorrespondenceSet::identity(1), &LossConfig::default()).unwrap();
        let want = 0.25 * 0.25 * std::f64::consts::LN_2;
        assert!((l.value - want).abs() < 1e-15);
        assert!((l.value - 0.0433).abs() < 1e-4);
    }

    #[test]
    fn zero_confidence_is_clamped_and_reported() {
        let c = conf(DMatrix::zeros(2, 2));
        let l = matching_loss(&c, &CorrespondenceSet::identity(2), &LossConfig::default()).unwrap();
        assert_eq!(l.clamped, 2);
        let want = -0.25 * (1.0 - CONFIDENCE_FLOOR).powi(2) * CONFIDENCE_FLOOR.ln();
        assert!((l.value - want).abs() < 1e-12);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        let c = conf(DMatrix::identity(2, 2));
        assert!(matching_loss(&c, &CorrespondenceSet::default(), &LossConfig::default()).is_err());
        let bad = CorrespondenceSet::new(vec![Correspondence::new(5, 0, 1.0)]);
        assert!(matching_loss(&c, &bad, &LossConfig::default()).is_err());
    }

    #[test]
    fn warping_loss_examples() {
        let s = PointCloud::from(vec![Point3::new(0.2, 0.1, 0.0)]);
        let shift = WarpFunction::Rigid(RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        assert_eq!(warping_loss(&s, &RigidTransform::identity(), &shift, &[0]).unwrap(), 1.0);
        let WarpFunction::Rigid(gt) = &shift else { unreachable!() };
        assert_eq!(warping_loss(&s, gt, &shift, &[0]).unwrap(), 0.0);
        assert_eq!(warping_loss(&s, &RigidTransform::identity(), &shift, &[]).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_combines_layers() {
        assert_eq!(total_loss([1.0, 2.0], [3.0, 4.0], 0.0), 3.0);
        assert!((total_loss([1.0, 2.0], [3.0, 4.0], 0.1) - 3.7).abs() < 1e-15);
    }
}
