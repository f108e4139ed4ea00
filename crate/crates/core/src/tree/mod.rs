//! Bregman anchor trees.
//!
//! Construction grows ⌈√n⌉ anchors over the points in scope, agglomerates
//! them by minimum merge cost, and repeats inside every anchor holding more
//! than one point until all leaves are singletons. Nodes are numbered in
//! preorder and each node's members occupy a contiguous range of a row
//! permutation, so ancestry tests reduce to range containment.

mod agglomerate;
mod anchors;
mod stats;

use serde::{Deserialize, Serialize};

pub use agglomerate::{agglomerate_anchors, merge_cost, Merge, MergeTree};
pub use anchors::{grow_anchors, point_steal_threshold, steal_threshold, Anchor};
pub use stats::{NodeStats, StatsBasis};

use crate::dataset::SmoothedMatrix;
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::sparse::SparsePoint;
use agglomerate::Cluster;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub children: Option<[NodeId; 2]>,
    /// Member range `start..end` into [`ClusterTree::permutation`].
    pub start: usize,
    pub end: usize,
    pub stats: NodeStats,
}

impl Node {
    pub fn size(&self) -> usize {
        self.end - self.start
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeConfig {
    /// Skip stealing candidates below the Bregman stealing threshold.
    pub prune: bool,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { prune: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    nodes: Vec<Node>,
    permutation: Vec<usize>,
    leaf_of_row: Vec<NodeId>,
    basis: StatsBasis,
    /// Σ_i log p0(x_i) over all rows.
    log_base_total: f64,
}

impl ClusterTree {
    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.permutation.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn size(&self, id: NodeId) -> usize {
        self.nodes[id].size()
    }

    pub fn children(&self, id: NodeId) -> Option<[NodeId; 2]> {
        self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let [l, r] = self.nodes[self.nodes[id].parent?].children?;
        Some(if l == id { r } else { l })
    }

    /// Position → row index.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn members(&self, id: NodeId) -> &[usize] {
        let n = &self.nodes[id];
        &self.permutation[n.start..n.end]
    }

    pub fn leaf_of_row(&self, row: usize) -> NodeId {
        self.leaf_of_row[row]
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    /// True when `a` is `b` or one of its ancestors.
    pub fn contains(&self, a: NodeId, b: NodeId) -> bool {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        na.start <= nb.start && nb.end <= na.end
    }

    /// True when the member sets of `a` and `b` intersect.
    pub fn overlaps(&self, a: NodeId, b: NodeId) -> bool {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        na.start < nb.end && nb.start < na.end
    }

    pub fn stats(&self, id: NodeId) -> &NodeStats {
        &self.nodes[id].stats
    }

    pub fn basis(&self) -> &StatsBasis {
        &self.basis
    }

    pub fn log_base_total(&self) -> f64 {
        self.log_base_total
    }

    /// Node pivot: the mean of its members.
    pub fn pivot(&self, id: NodeId) -> SparsePoint {
        self.nodes[id].stats.mean(&self.basis)
    }

    pub fn depth(&self, mut id: NodeId) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[id].parent {
            id = p;
            d += 1;
        }
        d
    }

    pub fn max_depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for id in 1..self.nodes.len() {
            depth[id] = depth[self.nodes[id].parent.expect("non-root")] + 1;
        }
        depth.into_iter().max().unwrap_or(0)
    }
}

pub fn node_stats(tree: &ClusterTree, id: NodeId) -> &NodeStats {
    tree.stats(id)
}

pub fn bregman_information(tree: &ClusterTree, id: NodeId, div: &Divergence) -> Result<f64> {
    tree.stats(id).bregman_information(tree.basis(), div)
}

pub fn build_cluster_tree(data: &SmoothedMatrix, div: &Divergence) -> Result<ClusterTree> {
    build_cluster_tree_with(data, div, &TreeConfig::default())
}

#[derive(Debug, Clone, Copy)]
enum Proto {
    Leaf(usize),
    Internal(usize, usize),
    Pending,
}

pub fn build_cluster_tree_with(data: &SmoothedMatrix, div: &Divergence, config: &TreeConfig) -> Result<ClusterTree> {
    data.check_domain(div)?;
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let points = data.points();
    let basis = StatsBasis::new(div, data.epsilon);

    let mut protos = vec![Proto::Pending];
    let mut work: Vec<(usize, Vec<usize>)> = vec![(0, (0..n).collect())];
    while let Some((slot, scope)) = work.pop() {
        if scope.len() == 1 {
            protos[slot] = Proto::Leaf(scope[0]);
            continue;
        }
        let m = ((scope.len() as f64).sqrt().ceil() as usize).clamp(2, scope.len());
        let anchors = anchors::grow(&points, &scope, m, div, config.prune)?;
        let groups: Vec<Vec<usize>> = if anchors.len() == 1 {
            // every point coincides with the pivot: split by position
            let mut rows = scope;
            rows.sort_unstable();
            let right = rows.split_off(rows.len() / 2);
            vec![rows, right]
        } else {
            anchors.iter().map(|a| a.rows().collect()).collect()
        };
        let clusters = groups
            .iter()
            .map(|g| Cluster::from_rows(&points, g.iter().copied()))
            .collect();
        let merge_tree = agglomerate::agglomerate(div, &basis, clusters)?;

        let mut ids = Vec::with_capacity(groups.len() + merge_tree.merges.len());
        for _ in &groups {
            ids.push(protos.len());
            protos.push(Proto::Pending);
        }
        let last = merge_tree.merges.len().saturating_sub(1);
        for (k, m) in merge_tree.merges.iter().enumerate() {
            let node = Proto::Internal(ids[m.left], ids[m.right]);
            if k == last {
                protos[slot] = node;
                ids.push(slot);
            } else {
                ids.push(protos.len());
                protos.push(node);
            }
        }
        for (k, g) in groups.into_iter().enumerate() {
            work.push((ids[k], g));
        }
    }
    Ok(finalize(&protos, &points, &basis, div))
}

fn finalize(protos: &[Proto], points: &[SparsePoint], basis: &StatsBasis, div: &Divergence) -> ClusterTree {
    let n = points.len();
    let mut nodes: Vec<Node> = Vec::with_capacity(2 * n - 1);
    let mut permutation = Vec::with_capacity(n);
    let mut leaf_of_row = vec![0; n];
    let mut kids: Vec<Option<(usize, usize)>> = Vec::with_capacity(2 * n - 1);

    // preorder; right child pushed first so the left one is numbered next
    let mut stack = vec![(0usize, None::<NodeId>)];
    while let Some((proto, parent)) = stack.pop() {
        let id = nodes.len();
        if let Some(p) = parent {
            match &mut nodes[p].children {
                Some(c) => c[1] = id,
                slot @ None => *slot = Some([id, usize::MAX]),
            }
        }
        let mut node = Node {
            parent,
            children: None,
            start: permutation.len(),
            end: permutation.len(),
            stats: NodeStats::default(),
        };
        match protos[proto] {
            Proto::Leaf(row) => {
                node.end += 1;
                node.stats = NodeStats::point(basis, div, &points[row]);
                permutation.push(row);
                leaf_of_row[row] = id;
                kids.push(None);
            }
            Proto::Internal(l, r) => {
                stack.push((r, Some(id)));
                stack.push((l, Some(id)));
                kids.push(Some((l, r)));
            }
            Proto::Pending => unreachable!("every proto slot is filled before finalize"),
        }
        nodes.push(node);
    }
    // postorder pass: children carry larger ids than their parent
    for id in (0..nodes.len()).rev() {
        if let Some([l, r]) = nodes[id].children {
            let stats = nodes[l].stats.merge(&nodes[r].stats);
            nodes[id].start = nodes[l].start;
            nodes[id].end = nodes[r].end;
            nodes[id].stats = stats;
        }
    }
    let log_base_total = points.iter().map(|p| basis.log_base_measure(div, p)).sum();
    ClusterTree {
        nodes,
        permutation,
        leaf_of_row,
        basis: basis.clone(),
        log_base_total,
    }
}
