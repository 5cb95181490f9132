//! Synthetic rigid and deformable pairs with exact ground truth, and
//! coordinate-derived descriptors for exercising the pipeline without a
//! trained backbone.

use nalgebra::{DMatrix, Quaternion, UnitQuaternion};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::attention::FeatureMatrix;
use crate::error::{Error, Result};
use crate::geometry::{
    overlap_set, AnalyticWarp, Correspondence, CorrespondenceSet, Point3, PointCloud, Vector3, WarpFunction, WarpKind,
};
use crate::procrustes::RigidTransform;

/// Allowed gap between the requested and the measured overlap ratio.
pub const OVERLAP_TOLERANCE: f64 = 0.05;

/// Side length of the sampled surface patch in meters (rigid pairs).
const RIGID_EXTENT: f64 = 2.0;
/// Side length of a deformable patch in meters.
const DEFORMABLE_EXTENT: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct RigidPair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps source coordinates onto the target (before noise).
    pub transform: RigidTransform,
    pub correspondences: CorrespondenceSet,
    /// Overlap ratio measured on the generated clouds.
    pub overlap_ratio: f64,
    /// Mean spacing of the underlying sample grid, meters.
    pub spacing: f64,
}

#[derive(Clone, Debug)]
pub struct DeformablePair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub warp: AnalyticWarp,
    pub correspondences: CorrespondenceSet,
}

impl DeformablePair {
    pub fn warp_function(&self) -> WarpFunction {
        WarpFunction::Analytic(self.warp)
    }
}

/// A smooth random height field: a sum of Gaussian bumps.
struct Terrain {
    bumps: Vec<(f64, f64, f64, f64)>,
}

impl Terrain {
    fn random(extent: f64, amplitude: f64, rng: &mut impl Rng) -> Self {
        let bumps = (0..8)
            .map(|_| {
                (
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                    rng.random_range(0.1..0.25) * extent,
                    rng.random_range(-amplitude..amplitude),
                )
            })
            .collect();
        Self { bumps }
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        self.bumps
            .iter()
            .map(|(cx, cy, s, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
            .sum()
    }
}

/// `count` points on a jittered grid over a square of side `extent`, lifted
/// onto the terrain. Returns the points and the grid spacing.
fn jittered_patch(count: usize, extent: f64, terrain: &Terrain, rng: &mut impl Rng) -> (Vec<Point3>, f64) {
    let side = (count as f64).sqrt().ceil() as usize;
    let h = extent / side as f64;
    let mut cells: Vec<usize> = (0..side * side).collect();
    cells.shuffle(rng);
    let points = cells[..count]
        .iter()
        .map(|&c| {
            let x = ((c / side) as f64 + 0.5 + rng.random_range(-0.25..0.25)) * h;
            let y = ((c % side) as f64 + 0.5 + rng.random_range(-0.25..0.25)) * h;
            Point3::new(x, y, terrain.height(x, y))
        })
        .collect();
    (points, h)
}

fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

fn add_noise(points: &mut [Point3], sigma: f64, rng: &mut impl Rng) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    for p in points {
        *p += Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
    }
    Ok(())
}

/// Two overlapping crops of one random surface.
///
/// Points of a jittered grid are ordered along a random in-plane direction;
/// the source takes the first `n_points`, the target a window of
/// `n_points` sharing `round(overlap_fraction · n_points)` of them. The
/// target is moved by a random rigid motion, both clouds are shuffled, and
/// Gaussian noise is added last. The ground-truth pairs are the shared
/// points.
pub fn synth_rigid_pair(seed: u64, n_points: usize, overlap_fraction: f64, noise_sigma: f64) -> Result<RigidPair> {
    if !(overlap_fraction > 0.0 && overlap_fraction <= 1.0) {
        return Err(Error::InfeasibleOverlap(format!(
            "overlap fraction must lie in (0, 1], got {overlap_fraction}"
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter("noise sigma must be non-negative".into()));
    }
    let shared = (overlap_fraction * n_points as f64).round() as usize;
    if n_points < 3 || shared < 3 {
        return Err(Error::InfeasibleOverlap(format!(
            "{n_points} points with overlap {overlap_fraction} leave {shared} shared points, need 3"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terrain = Terrain::random(RIGID_EXTENT, 0.25, &mut rng);
    let total = 2 * n_points - shared;
    let (mut points, spacing) = jittered_patch(total, RIGID_EXTENT, &terrain, &mut rng);

    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = Vector3::new(angle.cos(), angle.sin(), 0.0);
    points.sort_by(|a, b| a.coords.dot(&dir).total_cmp(&b.coords.dot(&dir)));

    let transform = RigidTransform::from_quaternion(
        random_rotation(&mut rng),
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ),
    );

    // Pool index k < n_points belongs to the source, k ≥ n_points − shared
    // to the target.
    let start = n_points - shared;
    let mut s_order: Vec<usize> = (0..n_points).collect();
    let mut t_order: Vec<usize> = (start..total).collect();
    s_order.shuffle(&mut rng);
    t_order.shuffle(&mut rng);
    let mut s_pos = vec![usize::MAX; total];
    for (i, &k) in s_order.iter().enumerate() {
        s_pos[k] = i;
    }
    let mut t_pos = vec![usize::MAX; total];
    for (j, &k) in t_order.iter().enumerate() {
        t_pos[k] = j;
    }
    let mut source: Vec<Point3> = s_order.iter().map(|&k| points[k]).collect();
    let mut target: Vec<Point3> = t_order.iter().map(|&k| transform.apply(&points[k])).collect();
    let mut pairs: Vec<Correspondence> = (start..n_points)
        .map(|k| Correspondence::new(s_pos[k], t_pos[k], 1.0))
        .collect();
    pairs.sort_by_key(|c| c.source);

    add_noise(&mut source, noise_sigma, &mut rng)?;
    add_noise(&mut target, noise_sigma, &mut rng)?;
    let source = PointCloud::from(source);
    let target = PointCloud::from(target);

    // Distinct grid points stay at least spacing/2 apart, so a fifth of the
    // spacing separates shared from unshared points; noise widens it.
    let sigma = (0.2 * spacing).max(6.0 * noise_sigma);
    let measured = overlap_set(&source, &target, &WarpFunction::Rigid(transform), sigma)?.ratio;
    if (measured - overlap_fraction).abs() > OVERLAP_TOLERANCE {
        return Err(Error::InfeasibleOverlap(format!(
            "requested overlap {overlap_fraction}, measured {measured:.3}"
        )));
    }
    Ok(RigidPair {
        source,
        target,
        transform,
        correspondences: CorrespondenceSet::new(pairs),
        overlap_ratio: measured,
        spacing,
    })
}

/// A curved patch and its image under an analytic warp. Points keep their
/// order, so the ground-truth pairing is the identity.
pub fn synth_deformable_pair(seed: u64, n_points: usize, kind: WarpKind, magnitude: f64) -> Result<DeformablePair> {
    if !(magnitude >= 0.0) {
        return Err(Error::InvalidParameter("warp magnitude must be non-negative".into()));
    }
    if n_points == 0 {
        return Err(Error::EmptyInput("deformable pair needs points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terrain = Terrain::random(DEFORMABLE_EXTENT, 0.03, &mut rng);
    let (points, _) = jittered_patch(n_points, DEFORMABLE_EXTENT, &terrain, &mut rng);
    let warp = AnalyticWarp::new(kind, magnitude);
    let target: Vec<Point3> = points.iter().map(|p| warp.apply(p)).collect();
    Ok(DeformablePair {
        source: PointCloud::from(points),
        target: PointCloud::from(target),
        warp,
        correspondences: CorrespondenceSet::identity(n_points),
    })
}

/// Random Fourier features of coordinates expressed in a shared canonical
/// frame: `x_c = cos(ω_c · p + b_c)`, scaled so rows have norm `scale`
/// on average.
///
/// Points that coincide in the canonical frame get identical descriptors,
/// which stands in for a learned, pose-invariant backbone.
#[derive(Clone, Debug)]
pub struct CoordinateFeatures {
    omega: Vec<Vector3>,
    phase: Vec<f64>,
    scale: f64,
}

impl CoordinateFeatures {
    /// Frequencies drawn from N(0, 1/bandwidth²) per axis.
    pub fn new(dim: usize, bandwidth: f64, scale: f64, seed: u64) -> Result<Self> {
        if dim == 0 || !(bandwidth > 0.0) || !(scale > 0.0) {
            return Err(Error::InvalidParameter("feature dim, bandwidth and scale must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / bandwidth).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let omega = (0..dim)
            .map(|_| Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        let phase = (0..dim).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        Ok(Self { omega, phase, scale })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn describe(&self, canonical: &[Point3]) -> FeatureMatrix {
        // E[cos²] = 1/2, so √(2/d) gives unit rows on average.
        let norm = self.scale * (2.0 / self.dim() as f64).sqrt();
        DMatrix::from_fn(canonical.len(), self.dim(), |i, c| {
            norm * (self.omega[c].dot(&canonical[i].coords) + self.phase[c]).cos()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procrustes::soft_procrustes;

    #[test]
    fn noiseless_full_overlap_recovers_transform() {
        let pair = synth_rigid_pair(1, 200, 1.0, 0.0).unwrap();
        assert_eq!(pair.correspondences.len(), 200);
        assert_eq!(pair.overlap_ratio, 1.0);
        let fit = soft_procrustes(&pair.correspondences, &pair.source, &pair.target).unwrap();
        assert!(fit.rotation_angle_to(&pair.transform) < 1e-8);
        assert!(fit.translation_distance_to(&pair.transform) < 1e-8);
    }

    #[test]
    fn partial_overlap_is_measured() {
        for seed in 0..5 {
            let pair = synth_rigid_pair(seed, 300, 0.3, 0.0).unwrap();
            assert!((0.25..=0.35).contains(&pair.overlap_ratio), "{}", pair.overlap_ratio);
            assert_eq!(pair.correspondences.len(), 90);
            for c in pair.correspondences.iter() {
                let d = pair.transform.apply(&pair.source[c.source]) - pair.target[c.target];
                assert!(d.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noisy_pairs_still_measure_their_overlap() {
        let pair = synth_rigid_pair(3, 400, 0.5, 0.002).unwrap();
        assert!((pair.overlap_ratio - 0.5).abs() <= OVERLAP_TOLERANCE);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = synth_rigid_pair(7, 100, 0.6, 0.001).unwrap();
        let b = synth_rigid_pair(7, 100, 0.6, 0.001).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert_eq!(a.transform, b.transform);
        assert_eq!(a.correspondences, b.correspondences);
        let c = synth_deformable_pair(7, 50, WarpKind::Twist, 0.5).unwrap();
        let d = synth_deformable_pair(7, 50, WarpKind::Twist, 0.5).unwrap();
        assert_eq!(c.target, d.target);
    }

    #[test]
    fn infeasible_requests() {
        assert!(synth_rigid_pair(0, 100, 0.0, 0.0).is_err());
        assert!(synth_rigid_pair(0, 100, 1.5, 0.0).is_err());
        assert!(synth_rigid_pair(0, 4, 0.3, 0.0).is_err());
        // Noise far above the grid spacing washes out the overlap contract.
        assert!(matches!(synth_rigid_pair(0, 400, 0.3, 0.5), Err(Error::InfeasibleOverlap(_))));
    }

    #[test]
    fn zero_magnitude_is_identity() {
        for kind in [WarpKind::Bend, WarpKind::Twist, WarpKind::Wave] {
            let pair = synth_deformable_pair(2, 64, kind, 0.0).unwrap();
            assert_eq!(pair.source, pair.target);
            assert_eq!(pair.correspondences, CorrespondenceSet::identity(64));
        }
    }

    #[test]
    fn coordinate_features_are_pose_invariant() {
        let pair = synth_rigid_pair(4, 100, 0.5, 0.0).unwrap();
        let f = CoordinateFeatures::new(24, 0.2, 1.0, 9).unwrap();
        let inv = pair.transform.inverse();
        let canonical_t: Vec<Point3> = pair.target.iter().map(|p| inv.apply(p)).collect();
        let xs = f.describe(pair.source.points());
        let xt = f.describe(&canonical_t);
        for c in pair.correspondences.iter() {
            assert!((xs.row(c.source) - xt.row(c.target)).amax() < 1e-9);
        }
    }
}
