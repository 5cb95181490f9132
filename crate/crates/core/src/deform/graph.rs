use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, Point3, PointCloud};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Minimum distance between sampled nodes, meters.
    pub node_spacing: f64,
    /// Nearest node neighbours each node is connected to before symmetrizing.
    pub edge_k: usize,
    /// Gaussian coverage radius γ of a node, meters.
    pub gamma_skin: f64,
    /// Nodes blended per point; `None` blends all nodes.
    pub skin_k: Option<usize>,
    /// Connected components with fewer nodes are dropped; `None` keeps all.
    pub min_component_nodes: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            node_spacing: 0.02,
            edge_k: 8,
            gamma_skin: 0.009,
            skin_k: Some(6),
            min_component_nodes: Some(40),
        }
    }
}

/// Embedded deformation graph.
///
/// `edges` holds directed pairs and is symmetric: `(i, j)` is present iff
/// `(j, i)` is. Each directed pair contributes one regularization residual.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "GraphDoc", try_from = "GraphDoc")]
pub struct DeformationGraph {
    nodes: Vec<Point3>,
    edges: Vec<(usize, usize)>,
    gamma_skin: f64,
    skin_k: Option<usize>,
    tree: KdTree,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    nodes: Vec<[f64; 3]>,
    edges: Vec<(usize, usize)>,
    gamma_skin: f64,
    #[serde(default)]
    skin_k: Option<usize>,
}

impl From<DeformationGraph> for GraphDoc {
    fn from(g: DeformationGraph) -> Self {
        Self {
            nodes: g.nodes.iter().map(|p| [p.x, p.y, p.z]).collect(),
            edges: g.edges,
            gamma_skin: g.gamma_skin,
            skin_k: g.skin_k,
        }
    }
}

impl TryFrom<GraphDoc> for DeformationGraph {
    type Error = Error;

    fn try_from(doc: GraphDoc) -> Result<Self> {
        let nodes = doc.nodes.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect();
        Self::from_parts(nodes, doc.edges, doc.gamma_skin, doc.skin_k)
    }
}

impl DeformationGraph {
    /// Assembles a graph from explicit nodes and directed edges. Edges are
    /// symmetrized and deduplicated.
    pub fn from_parts(
        nodes: Vec<Point3>,
        edges: Vec<(usize, usize)>,
        gamma_skin: f64,
        skin_k: Option<usize>,
    ) -> Result<Self> {
        if !(gamma_skin > 0.0 && gamma_skin.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma_skin must be positive, got {gamma_skin}"
            )));
        }
        if skin_k == Some(0) {
            return Err(Error::InvalidParameter("skin_k must be at least 1".into()));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in &edges {
            for idx in [i, j] {
                if idx >= nodes.len() {
                    return Err(Error::IndexOutOfRange {
                        what: "graph nodes",
                        index: idx,
                        len: nodes.len(),
                    });
                }
            }
            if i != j {
                set.insert((i, j));
                set.insert((j, i));
            }
        }
        let tree = KdTree::new(&nodes);
        Ok(Self {
            nodes,
            edges: set.into_iter().collect(),
            gamma_skin,
            skin_k,
            tree,
        })
    }

    pub fn nodes(&self) -> &[Point3] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn gamma_skin(&self) -> f64 {
        self.gamma_skin
    }

    pub fn skin_k(&self) -> Option<usize> {
        self.skin_k
    }

    pub(crate) fn node_tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|(i, _)| *i == node).count()
    }

    /// Connected components as sorted node lists, ordered by smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j) in &self.edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for n in 0..self.nodes.len() {
            let root = find(&mut parent, n);
            groups.entry(root).or_default().push(n);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|c| c[0]);
        out
    }

    /// Keeps only the given nodes, reindexed in order, with their edges.
    fn restricted_to(&self, keep: &[usize]) -> Result<Self> {
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(n, &o)| (o, n)).collect();
        let nodes = keep.iter().map(|&o| self.nodes[o]).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|(i, j)| Some((*remap.get(i)?, *remap.get(j)?)))
            .collect();
        Self::from_parts(nodes, edges, self.gamma_skin, self.skin_k)
    }
}

/// Samples nodes over `cloud` and connects them.
///
/// Nodes are chosen greedily in point order: a point becomes a node unless
/// an existing node lies closer than `node_spacing`. Each node is linked to
/// its `edge_k` nearest nodes and the edge set is symmetrized. Components
/// smaller than `min_component_nodes` are dropped.
pub fn build_graph(cloud: &PointCloud, config: &GraphConfig) -> Result<DeformationGraph> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cannot build a deformation graph on an empty cloud"));
    }
    if !(config.node_spacing > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "node_spacing must be positive, got {}",
            config.node_spacing
        )));
    }
    if config.edge_k == 0 {
        return Err(Error::InvalidParameter("edge_k must be at least 1".into()));
    }

    let nodes = radius_sample(cloud.points(), config.node_spacing);
    let tree = KdTree::new(&nodes);
    let mut edges = Vec::with_capacity(nodes.len() * config.edge_k);
    for (i, p) in nodes.iter().enumerate() {
        // The first neighbour is the node itself.
        for n in tree.knn(p, config.edge_k + 1) {
            if n.id != i {
                edges.push((i, n.id));
            }
        }
    }
    let graph = DeformationGraph::from_parts(nodes, edges, config.gamma_skin, config.skin_k)?;

    match config.min_component_nodes {
        Some(min) if min > 1 => {
            let keep: Vec<usize> = graph
                .components()
                .into_iter()
                .filter(|c| c.len() >= min)
                .flatten()
                .collect();
            if keep.len() == graph.node_count() {
                Ok(graph)
            } else {
                let mut keep = keep;
                keep.sort_unstable();
                log::warn!(
                    "dropping {} of {} graph nodes in components smaller than {min}",
                    graph.node_count() - keep.len(),
                    graph.node_count()
                );
                graph.restricted_to(&keep)
            }
        }
        _ => Ok(graph),
    }
}

/// Greedy radius sampling with a hash grid of cell size `spacing`.
fn radius_sample(points: &[Point3], spacing: f64) -> Vec<Point3> {
    let key = |p: &Point3| {
        [
            (p.x / spacing).floor() as i64,
            (p.y / spacing).floor() as i64,
            (p.z / spacing).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut nodes: Vec<Point3> = Vec::new();
    let s2 = spacing * spacing;
    for p in points {
        let k = key(p);
        let mut blocked = false;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if ids.iter().any(|&n| (nodes[n] - p).norm_squared() < s2) {
                            blocked = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        if !blocked {
            grid.entry(k).or_default().push(nodes.len());
            nodes.push(*p);
        }
    }
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_pruning(spacing: f64, edge_k: usize) -> GraphConfig {
        GraphConfig {
            node_spacing: spacing,
            edge_k,
            gamma_skin: 0.009,
            skin_k: Some(6),
            min_component_nodes: None,
        }
    }

    fn planar_grid(n: usize, step: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * step, j as f64 * step, 0.0));
            }
        }
        PointCloud::from(pts)
    }

    #[test]
    fn single_point_graph() {
        let cloud = PointCloud::from(vec![Point3::new(1.0, 2.0, 3.0)]);
        let g = build_graph(&cloud, &no_pruning(0.1, 4)).unwrap();
        assert_eq!(g.node_count(), 1);
        assert!(g.edges().is_empty());
        let pruned = build_graph(&cloud, &GraphConfig::default()).unwrap();
        assert_eq!(pruned.node_count(), 0);
    }

    #[test]
    fn empty_cloud_is_an_error() {
        assert!(build_graph(&PointCloud::default(), &GraphConfig::default()).is_err());
    }

    #[test]
    fn planar_grid_structure() {
        let step = 0.01;
        let g = build_graph(&planar_grid(10, step), &no_pruning(2.0 * step, 4)).unwrap();
        assert!((20..=30).contains(&g.node_count()), "{}", g.node_count());
        for n in 0..g.node_count() {
            assert!(g.degree(n) >= 4);
        }
        // Spacing respected.
        for (a, p) in g.nodes().iter().enumerate() {
            for q in &g.nodes()[a + 1..] {
                assert!((p - q).norm() >= 2.0 * step - 1e-12);
            }
        }
        // Coverage: every point within spacing of some node.
        for p in planar_grid(10, step).iter() {
            assert!(g.nodes().iter().any(|n| (n - p).norm() < 2.0 * step));
        }
    }

    #[test]
    fn edges_are_symmetric() {
        let g = build_graph(&planar_grid(12, 0.01), &no_pruning(0.025, 3)).unwrap();
        for &(i, j) in g.edges() {
            assert!(g.edges().contains(&(j, i)));
        }
    }

    #[test]
    fn small_components_are_dropped() {
        // A 10x10 node patch plus a far-away cluster of 3 nodes.
        let mut pts = planar_grid(10, 1.0).into_points();
        for k in 0..3 {
            pts.push(Point3::new(100.0 + k as f64, 100.0, 0.0));
        }
        let cfg = GraphConfig {
            node_spacing: 0.5,
            edge_k: 2,
            gamma_skin: 1.0,
            skin_k: Some(4),
            min_component_nodes: Some(40),
        };
        let g = build_graph(&PointCloud::from(pts), &cfg).unwrap();
        assert_eq!(g.node_count(), 100);
        assert_eq!(g.components().len(), 1);
    }

    #[test]
    fn json_round_trip() {
        let g = build_graph(&planar_grid(6, 0.01), &no_pruning(0.02, 3)).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: DeformationGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back.nodes(), g.nodes());
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.gamma_skin(), g.gamma_skin());
    }
}
