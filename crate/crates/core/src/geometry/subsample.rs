use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud, Vector3};
use crate::error::{Error, Result};

/// How a voxel is represented in the subsampled cloud.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleMode {
    /// Centroid of the points in the voxel.
    #[default]
    Centroid,
    /// The input point closest to the voxel centroid (lowest id on ties).
    Representative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subsampled {
    pub cloud: PointCloud,
    /// `cell_of[original_id]` is the output id the point was pooled into.
    pub cell_of: Vec<usize>,
}

/// Voxel-grid subsampling on a grid anchored at the origin
/// (`cell = floor(p / voxel)`). Output cells are ordered by first occurrence
/// in the input.
pub fn grid_subsample(cloud: &PointCloud, voxel: f64, mode: SubsampleMode) -> Result<Subsampled> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "voxel size must be positive, got {voxel}"
        )));
    }
    let mut cells: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<Vector3> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut cell_of = Vec::with_capacity(cloud.len());

    for (i, p) in cloud.iter().enumerate() {
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let cell = *cells.entry(key).or_insert_with(|| {
            sums.push(Vector3::zeros());
            members.push(Vec::new());
            sums.len() - 1
        });
        sums[cell] += p.coords;
        members[cell].push(i);
        cell_of.push(cell);
    }

    let points = sums
        .iter()
        .zip(&members)
        .map(|(sum, ids)| {
            let centroid = Point3::from(sum / ids.len() as f64);
            match mode {
                SubsampleMode::Centroid => centroid,
                SubsampleMode::Representative => {
                    let mut best = ids[0];
                    let mut best_d = (cloud[best] - centroid).norm_squared();
                    for &id in &ids[1..] {
                        let d = (cloud[id] - centroid).norm_squared();
                        if d < best_d {
                            best = id;
                            best_d = d;
                        }
                    }
                    cloud[best]
                }
            }
        })
        .collect::<Vec<_>>();

    Ok(Subsampled {
        cloud: PointCloud::from(points),
        cell_of,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_is_unchanged() {
        let cloud = PointCloud::from(vec![Point3::new(0.3, -1.7, 2.2)]);
        let out = grid_subsample(&cloud, 0.5, SubsampleMode::Centroid).unwrap();
        assert_eq!(out.cloud.points(), cloud.points());
        assert_eq!(out.cell_of, vec![0]);
    }

    #[test]
    fn cube_corners_collapse_to_center() {
        let s = 0.01;
        let base = Vector3::new(0.02, 0.03, 0.04);
        let mut pts = Vec::new();
        for dx in [0.0, s] {
            for dy in [0.0, s] {
                for dz in [0.0, s] {
                    pts.push(Point3::from(base + Vector3::new(dx, dy, dz)));
                }
            }
        }
        let out = grid_subsample(&PointCloud::from(pts), 0.1, SubsampleMode::Centroid).unwrap();
        assert_eq!(out.cloud.len(), 1);
        let c = out.cloud[0];
        let want = base + Vector3::repeat(s / 2.0);
        assert!((c.coords - want).norm() < 1e-15);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let out = grid_subsample(&PointCloud::default(), 0.1, SubsampleMode::Centroid).unwrap();
        assert!(out.cloud.is_empty());
        assert!(out.cell_of.is_empty());
    }

    #[test]
    fn non_positive_voxel_rejected() {
        assert!(grid_subsample(&PointCloud::default(), 0.0, SubsampleMode::Centroid).is_err());
    }

    #[test]
    fn idempotent_and_shrinking() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.2..0.2),
                )
            })
            .collect();
        let cloud = PointCloud::from(pts);
        for mode in [SubsampleMode::Centroid, SubsampleMode::Representative] {
            let once = grid_subsample(&cloud, 0.1, mode).unwrap();
            assert!(once.cloud.len() <= cloud.len());
            let twice = grid_subsample(&once.cloud, 0.1, mode).unwrap();
            assert_eq!(once.cloud, twice.cloud);
            // Representatives are input points.
            if mode == SubsampleMode::Representative {
                for p in once.cloud.iter() {
                    assert!(cloud.iter().any(|q| q == p));
                }
            }
        }
    }

    #[test]
    fn default_voxel_size_for_rigid_mode() {
        assert_eq!(crate::config::SubsampleConfig::rigid().voxel, 0.025);
    }
}
