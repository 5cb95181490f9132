use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// Result of a neighbour query: point id and Euclidean distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

/// Candidate ordered by (squared distance, id) so that ties resolve to the
/// lowest id.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist2: f64,
    id: usize,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Exact k-d tree over a fixed point set.
///
/// Implicit layout: the node of the index range `[lo, hi)` sits at
/// `mid = (lo + hi) / 2`, with its split axis stored in `axes[mid]`.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            axes: vec![0; points.len()],
        };
        tree.build(0, points.len());
        tree
    }

    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self::new(cloud.points())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF_SIZE {
            return;
        }
        let axis = self.widest_axis(lo, hi);
        let mid = (lo + hi) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        self.axes[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    fn widest_axis(&self, lo: usize, hi: usize) -> usize {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in &self.order[lo..hi] {
            for a in 0..3 {
                min[a] = min[a].min(self.points[i][a]);
                max[a] = max[a].max(self.points[i][a]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b])))
            .unwrap_or(0)
    }

    /// Exact nearest neighbour; ties go to the lowest id.
    pub fn nearest(&self, query: &Point3) -> Result<Neighbor> {
        if self.points.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let mut best = Candidate {
            dist2: f64::INFINITY,
            id: usize::MAX,
        };
        self.nearest_in(query, 0, self.points.len(), &mut best);
        Ok(Neighbor {
            id: best.id,
            distance: best.dist2.sqrt(),
        })
    }

    fn nearest_in(&self, query: &Point3, lo: usize, hi: usize, best: &mut Candidate) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let c = Candidate {
                    dist2: (self.points[i] - query).norm_squared(),
                    id: i,
                };
                if c < *best {
                    *best = c;
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let c = Candidate {
            dist2: (self.points[i] - query).norm_squared(),
            id: i,
        };
        if c < *best {
            *best = c;
        }
        let axis = self.axes[mid] as usize;
        let delta = query[axis] - self.points[i][axis];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(query, near.0, near.1, best);
        // Equal plane distance may still hide a lower-id tie.
        if delta * delta <= best.dist2 {
            self.nearest_in(query, far.0, far.1, best);
        }
    }

    /// The `k` nearest points sorted by (distance, id). Returns fewer when
    /// the tree holds fewer than `k` points.
    pub fn knn(&self, query: &Point3, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_in(query, k, 0, self.points.len(), &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                id: c.id,
                distance: c.dist2.sqrt(),
            })
            .collect()
    }

    fn offer(heap: &mut BinaryHeap<Candidate>, k: usize, c: Candidate) {
        if heap.len() < k {
            heap.push(c);
        } else if let Some(worst) = heap.peek() {
            if c < *worst {
                heap.pop();
                heap.push(c);
            }
        }
    }

    fn knn_in(
        &self,
        query: &Point3,
        k: usize,
        lo: usize,
        hi: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let dist2 = (self.points[i] - query).norm_squared();
                Self::offer(heap, k, Candidate { dist2, id: i });
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let dist2 = (self.points[i] - query).norm_squared();
        Self::offer(heap, k, Candidate { dist2, id: i });
        let axis = self.axes[mid] as usize;
        let delta = query[axis] - self.points[i][axis];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_in(query, k, near.0, near.1, heap);
        let bound = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.peek().map_or(f64::INFINITY, |w| w.dist2)
        };
        if delta * delta <= bound {
            self.knn_in(query, k, far.0, far.1, heap);
        }
    }

    /// All points strictly closer than `radius`, sorted by (distance, id).
    pub fn within(&self, query: &Point3, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_in(query, radius * radius, 0, self.points.len(), &mut out);
        }
        out.sort_by(|a, b| a.key_cmp(b));
        out.into_iter()
            .map(|c| Neighbor {
                id: c.id,
                distance: c.dist2.sqrt(),
            })
            .collect()
    }

    fn within_in(&self, query: &Point3, r2: f64, lo: usize, hi: usize, out: &mut Vec<Candidate>) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let dist2 = (self.points[i] - query).norm_squared();
                if dist2 < r2 {
                    out.push(Candidate { dist2, id: i });
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let dist2 = (self.points[i] - query).norm_squared();
        if dist2 < r2 {
            out.push(Candidate { dist2, id: i });
        }
        let axis = self.axes[mid] as usize;
        let delta = query[axis] - self.points[i][axis];
        if delta < 0.0 || delta * delta < r2 {
            self.within_in(query, r2, lo, mid, out);
        }
        if delta >= 0.0 || delta * delta < r2 {
            self.within_in(query, r2, mid + 1, hi, out);
        }
    }
}

/// One-shot nearest neighbour of `query` in `cloud`.
pub fn nearest_neighbor(query: &Point3, cloud: &PointCloud) -> Result<Neighbor> {
    KdTree::from_cloud(cloud).nearest(query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn brute_force(points: &[Point3], q: &Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn query_on_cloud_point_returns_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 50);
        let tree = KdTree::new(&pts);
        for (k, p) in pts.iter().enumerate() {
            let n = tree.nearest(p).unwrap();
            assert_eq!((n.id, n.distance), (k, 0.0));
        }
    }

    #[test]
    fn direct_distances() {
        let cloud = PointCloud::from(vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 2.0, 0.0)]);
        let n = nearest_neighbor(&Point3::origin(), &cloud).unwrap();
        assert_eq!(n.id, 0);
        assert_eq!(n.distance, 1.0);
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let err = nearest_neighbor(&Point3::origin(), &PointCloud::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty target");
    }

    #[test]
    fn ties_go_to_lowest_id() {
        // Duplicates and equidistant points everywhere.
        let mut pts = Vec::new();
        for _ in 0..5 {
            for x in -3..=3 {
                for y in -3..=3 {
                    pts.push(Point3::new(x as f64, y as f64, 0.0));
                }
            }
        }
        let tree = KdTree::new(&pts);
        for x in -6..=6 {
            for y in -6..=6 {
                let q = Point3::new(x as f64 * 0.5, y as f64 * 0.5, 0.0);
                assert_eq!(tree.nearest(&q).unwrap().id, brute_force(&pts, &q).0);
            }
        }
    }

    #[test]
    fn agrees_with_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(1..300);
            let pts = random_points(&mut rng, n);
            let tree = KdTree::new(&pts);
            for q in random_points(&mut rng, 10) {
                let got = tree.nearest(&q).unwrap();
                let want = brute_force(&pts, &q);
                assert_eq!(got.id, want.0);
                assert_eq!(got.distance, want.1);
            }
        }
    }

    #[test]
    fn knn_and_radius_match_sorting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_points(&mut rng, 400);
        let tree = KdTree::new(&pts);
        for q in random_points(&mut rng, 20) {
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - q).norm_squared(), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got: Vec<usize> = tree.knn(&q, 7).iter().map(|n| n.id).collect();
            let want: Vec<usize> = all.iter().take(7).map(|x| x.1).collect();
            assert_eq!(got, want);

            let r = 0.3;
            let got: Vec<usize> = tree.within(&q, r).iter().map(|n| n.id).collect();
            let want: Vec<usize> = all.iter().filter(|x| x.0 < r * r).map(|x| x.1).collect();
            assert_eq!(got, want);
        }
        assert_eq!(tree.knn(&Point3::origin(), 1000).len(), 400);
    }
}
