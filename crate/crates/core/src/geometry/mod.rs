//! Point cloud containers, exact nearest-neighbour search, voxel-grid
//! subsampling, warps, overlap sets and ground-truth correspondences.

mod kdtree;
mod overlap;
mod subsample;
mod warp;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use kdtree::{nearest_neighbor, KdTree, Neighbor};
pub use overlap::{mutual_nn_correspondences, overlap_set, Overlap};
pub use subsample::{grid_subsample, SubsampleMode, Subsampled};
pub use warp::{AnalyticWarp, WarpFunction, WarpKind};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

/// An ordered set of points in meters. Point ids are their indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { points })
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

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn get(&self, id: usize) -> Option<&Point3> {
        self.points.get(id)
    }

    /// Checked lookup used wherever an id comes from user data.
    pub fn point(&self, id: usize) -> Result<&Point3> {
        self.points.get(id).ok_or(Error::IndexOutOfRange {
            what: "point cloud",
            index: id,
            len: self.points.len(),
        })
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    pub fn map(&self, mut f: impl FnMut(&Point3) -> Point3) -> Self {
        Self {
            points: self.points.iter().map(&mut f).collect(),
        }
    }

    pub fn translated(&self, delta: &Vector3) -> Self {
        self.map(|p| p + delta)
    }

    /// Subset in the order given by `ids`.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let points = ids
            .iter()
            .map(|&i| self.point(i).copied())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points })
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        debug_assert!(points.iter().all(|p| p.coords.iter().all(|c| c.is_finite())));
        Self { points }
    }
}

impl std::ops::Index<usize> for PointCloud {
    type Output = Point3;

    fn index(&self, id: usize) -> &Point3 {
        &self.points[id]
    }
}

impl<'a> IntoIterator for &'a PointCloud {
    type Item = &'a Point3;
    type IntoIter = std::slice::Iter<'a, Point3>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub confidence: f64,
}

impl Correspondence {
    pub fn new(source: usize, target: usize, confidence: f64) -> Self {
        Self {
            source,
            target,
            confidence,
        }
    }
}

/// Source/target id pairs with a confidence (or normalized weight) each.
///
/// Serialized as `{"pairs": [[i, j, conf], ...]}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<Correspondence>) -> Self {
        Self { pairs }
    }

    /// Pairs `(i, i)` with confidence 1 for `i < n`.
    pub fn identity(n: usize) -> Self {
        Self::new((0..n).map(|i| Correspondence::new(i, i, 1.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.pairs.iter()
    }

    pub fn push(&mut self, pair: Correspondence) {
        self.pairs.push(pair);
    }

    pub fn into_pairs(self) -> Vec<Correspondence> {
        self.pairs
    }

    /// Checks the id ranges and that every confidence is finite.
    pub fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        for c in &self.pairs {
            if c.source >= n_source {
                return Err(Error::IndexOutOfRange {
                    what: "source cloud",
                    index: c.source,
                    len: n_source,
                });
            }
            if c.target >= n_target {
                return Err(Error::IndexOutOfRange {
                    what: "target cloud",
                    index: c.target,
                    len: n_target,
                });
            }
            if !c.confidence.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite confidence for pair ({}, {})",
                    c.source, c.target
                )));
            }
        }
        Ok(())
    }

    /// Swaps the roles of source and target.
    pub fn transposed(&self) -> Self {
        Self::new(
            self.pairs
                .iter()
                .map(|c| Correspondence::new(c.target, c.source, c.confidence))
                .collect(),
        )
    }

    /// Resolves ids into `(source point, target point)` coordinates.
    pub fn point_pairs(
        &self,
        source: &PointCloud,
        target: &PointCloud,
    ) -> Result<Vec<(Point3, Point3)>> {
        self.pairs
            .iter()
            .map(|c| Ok((*source.point(c.source)?, *target.point(c.target)?)))
            .collect()
    }

    /// Same pairs with every confidence replaced by `value`.
    pub fn with_uniform_confidence(&self, value: f64) -> Self {
        Self::new(
            self.pairs
                .iter()
                .map(|c| Correspondence::new(c.source, c.target, value))
                .collect(),
        )
    }
}

impl FromIterator<Correspondence> for CorrespondenceSet {
    fn from_iter<I: IntoIterator<Item = Correspondence>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a CorrespondenceSet {
    type Item = &'a Correspondence;
    type IntoIter = std::slice::Iter<'a, Correspondence>;

    fn into_iter(self) -> Self::IntoIter {
        self.pairs.iter()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairsDoc {
    pairs: Vec<(usize, usize, f64)>,
}

impl Serialize for CorrespondenceSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PairsDoc {
            pairs: self
                .pairs
                .iter()
                .map(|c| (c.source, c.target, c.confidence))
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CorrespondenceSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = PairsDoc::deserialize(deserializer)?;
        Ok(doc
            .pairs
            .into_iter()
            .map(|(i, j, c)| Correspondence::new(i, j, c))
            .collect())
    }
}
