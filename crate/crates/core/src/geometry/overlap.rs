use super::{Correspondence, CorrespondenceSet, KdTree, PointCloud, WarpFunction};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Overlap {
    /// Source ids whose warped position has a target neighbour within sigma.
    pub ids: Vec<usize>,
    /// `ids.len() / |source|`.
    pub ratio: f64,
}

/// Source points that land within `sigma` of the target under `warp`.
pub fn overlap_set(
    source: &PointCloud,
    target: &PointCloud,
    warp: &WarpFunction,
    sigma: f64,
) -> Result<Overlap> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if target.is_empty() || source.is_empty() {
        return Ok(Overlap {
            ids: Vec::new(),
            ratio: 0.0,
        });
    }
    let tree = KdTree::from_cloud(target);
    let mut ids = Vec::new();
    for (i, p) in source.iter().enumerate() {
        let warped = warp.apply_source(i, p)?;
        if tree.nearest(&warped)?.distance < sigma {
            ids.push(i);
        }
    }
    let ratio = ids.len() as f64 / source.len() as f64;
    Ok(Overlap { ids, ratio })
}

/// Mutual nearest neighbours closer than `radius`, with confidence 1.
///
/// Pairs are ordered by source id.
pub fn mutual_nn_correspondences(
    source_warped: &PointCloud,
    target: &PointCloud,
    radius: f64,
) -> Result<CorrespondenceSet> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if source_warped.is_empty() || target.is_empty() {
        return Ok(CorrespondenceSet::default());
    }
    let target_tree = KdTree::from_cloud(target);
    let source_tree = KdTree::from_cloud(source_warped);
    let mut out = CorrespondenceSet::default();
    for (i, p) in source_warped.iter().enumerate() {
        let fwd = target_tree.nearest(p)?;
        if fwd.distance >= radius {
            continue;
        }
        let back = source_tree.nearest(&target[fwd.id])?;
        if back.id == i {
            out.push(Correspondence::new(i, fwd.id, 1.0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                    )
                })
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn self_overlap_is_total() {
        let s = random_cloud(1, 100);
        for sigma in [1e-9, 0.01, 1.0] {
            let o = overlap_set(&s, &s, &WarpFunction::identity(), sigma).unwrap();
            assert_eq!(o.ids, (0..100).collect::<Vec<_>>());
            assert_eq!(o.ratio, 1.0);
        }
    }

    #[test]
    fn far_translation_gives_empty_overlap() {
        let sigma = 0.04;
        let t = random_cloud(2, 50);
        // Flat in x so every NN distance is exactly the shift.
        let t = t.map(|p| Point3::new(0.0, p.y, p.z));
        let s = t.translated(&Vector3::new(10.0 * sigma, 0.0, 0.0));
        let o = overlap_set(&s, &t, &WarpFunction::identity(), sigma).unwrap();
        assert!(o.ids.is_empty());
        assert_eq!(o.ratio, 0.0);
    }

    #[test]
    fn empty_target_gives_zero_ratio() {
        let s = random_cloud(3, 10);
        let o = overlap_set(&s, &PointCloud::default(), &WarpFunction::identity(), 0.1).unwrap();
        assert!(o.ids.is_empty());
        assert_eq!(o.ratio, 0.0);
    }

    #[test]
    fn identical_clouds_pair_identically() {
        let s = random_cloud(4, 80);
        let k = mutual_nn_correspondences(&s, &s, 0.06).unwrap();
        assert_eq!(k, CorrespondenceSet::identity(80));
    }

    #[test]
    fn clusters_pair_only_internally() {
        // Two clusters 10 m apart; inside each, target is a small jitter of
        // the source so mutual pairs stay within their cluster.
        let mut s = Vec::new();
        let mut t = Vec::new();
        for (c, offset) in [0.0, 10.0].iter().enumerate() {
            for k in 0..4 {
                let base = Point3::new(offset + 0.1 * k as f64, 0.0, 0.0);
                s.push(base);
                t.push(base + Vector3::new(0.0, 0.01 * (c + 1) as f64, 0.0));
            }
        }
        let (s, t) = (PointCloud::from(s), PointCloud::from(t));
        let k = mutual_nn_correspondences(&s, &t, 0.06).unwrap();
        // Exhaustive check of the definition.
        for c in k.iter() {
            assert_eq!((c.source < 4), (c.target < 4));
        }
        let mut want = Vec::new();
        for i in 0..s.len() {
            let j = (0..t.len())
                .min_by(|&a, &b| (s[i] - t[a]).norm().total_cmp(&(s[i] - t[b]).norm()))
                .unwrap();
            let back = (0..s.len())
                .min_by(|&a, &b| (t[j] - s[a]).norm().total_cmp(&(t[j] - s[b]).norm()))
                .unwrap();
            if back == i && (s[i] - t[j]).norm() < 0.06 {
                want.push(Correspondence::new(i, j, 1.0));
            }
        }
        assert_eq!(k.pairs(), want.as_slice());
        assert_eq!(k.len(), 8);
    }

    #[test]
    fn mutual_pairs_are_symmetric() {
        let s = random_cloud(5, 200);
        let t = random_cloud(6, 150);
        let fwd = mutual_nn_correspondences(&s, &t, 0.1).unwrap();
        let back = mutual_nn_correspondences(&t, &s, 0.1).unwrap();
        let mut a: Vec<(usize, usize)> = fwd.iter().map(|c| (c.source, c.target)).collect();
        let mut b: Vec<(usize, usize)> = back.transposed().iter().map(|c| (c.source, c.target)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
