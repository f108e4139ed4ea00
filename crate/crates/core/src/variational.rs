//! Block divergence sums, the block-parameter optimizer and the variational
//! lower bound.
//!
//! With one parameter q_AB per block and the row constraints
//! Σ_{(A,B) ∋ i} |B|·q_AB = 1, the bound
//!
//! ```text
//! ℓ = c − Σ q_AB·D_AB − Σ |A||B|·q_AB·log q_AB
//! ```
//!
//! is strictly concave in q. Stationarity gives
//! log q_AB = Λ_A − D_AB/(|A||B|) where Λ_A is (up to a constant) the mean
//! of per-row multipliers over A. Because Λ at an internal node is the
//! size-weighted mean of its children, the optimum solves in one bottom-up
//! and one top-down pass over the tree, see [`optimize_q`].

use serde::{Deserialize, Serialize};

use crate::dataset::SmoothedMatrix;
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::partition::BlockPartition;
use crate::tree::{ClusterTree, NodeStats, StatsBasis};

/// Largest tolerated deviation of any row's Σ|B|·q from one.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// D_AB = Σ_{x∈A} Σ_{m∈B} d_φ(x, m) from subtree statistics.
pub fn block_divergence_sum(a: &NodeStats, b: &NodeStats, basis: &StatsBasis) -> f64 {
    let (na, nb) = (a.count as f64, b.count as f64);
    let d = nb * a.s1 + na * (b.s2 - b.s1) - a.s3_dot_s4(b, basis);
    // rounding can leave a tiny negative value for coincident points
    d.max(0.0)
}

/// D_AB for every block, in block order.
pub fn block_divergences(tree: &ClusterTree, partition: &BlockPartition) -> Vec<f64> {
    partition
        .blocks()
        .iter()
        .map(|blk| block_divergence_sum(tree.stats(blk.a), tree.stats(blk.b), tree.basis()))
        .collect()
}

/// Optimized block parameters, stored in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub log_q: Vec<f64>,
    /// Largest per-row deviation of Σ|B|·q from one.
    pub residual: f64,
}

impl BlockParams {
    pub fn q(&self, k: usize) -> f64 {
        self.log_q[k].exp()
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_q.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.log_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_q.is_empty()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Per-row Σ|B|·q minus one, worst case over rows.
pub fn constraint_residual(tree: &ClusterTree, partition: &BlockPartition, log_q: &[f64]) -> f64 {
    let by_node = partition.by_row_node(tree);
    let mut mass = vec![0.0; tree.len()];
    let mut worst: f64 = 0.0;
    // parents precede children in preorder
    for v in 0..tree.len() {
        let inherited = tree.parent(v).map_or(0.0, |p| mass[p]);
        let own: f64 = by_node[v]
            .iter()
            .map(|&k| tree.size(partition.blocks()[k].b) as f64 * log_q[k].exp())
            .sum();
        mass[v] = inherited + own;
        if tree.children(v).is_none() {
            worst = worst.max((mass[v] - 1.0).abs());
        }
    }
    worst
}

/// The optimizer's result: parameters, block divergences and the bound at
/// the optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub params: BlockParams,
    pub d_ab: Vec<f64>,
    /// N·G_root, the optimal value of −Σ q·D − Σ |A||B|·q·log q.
    pub objective: f64,
}

/// Maximizes the bound over q subject to the row constraints.
///
/// Bottom-up, with W_v = Σ_{blocks at v} |B|·exp(−D/(|A||B|)):
///
/// ```text
/// G_leaf = log W_leaf
/// G_u    = log(W_u + exp(ā_u)),  ā_u = (|l|·G_l + |r|·G_r)/|u|
/// ```
///
/// Top-down, with R_root = 1 and R_child = R_u·exp(ā_u − G_u), the optimum is
/// log q_AB = log R_A − G_A − D_AB/(|A||B|) and the objective equals N·G_root.
pub fn optimize_q(tree: &ClusterTree, partition: &BlockPartition) -> Result<Fit> {
    let d_ab = block_divergences(tree, partition);
    optimize_with(tree, partition, d_ab)
}

pub fn optimize_with(tree: &ClusterTree, partition: &BlockPartition, d_ab: Vec<f64>) -> Result<Fit> {
    if let Some(k) = d_ab.iter().position(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument(format!("block {k} has a non-finite divergence sum")));
    }
    let blocks = partition.blocks();
    let by_node = partition.by_row_node(tree);
    let scaled: Vec<f64> = blocks
        .iter()
        .zip(&d_ab)
        .map(|(blk, d)| d / (tree.size(blk.a) as f64 * tree.size(blk.b) as f64))
        .collect();

    let n_nodes = tree.len();
    let mut log_w = vec![f64::NEG_INFINITY; n_nodes];
    for v in 0..n_nodes {
        let terms = by_node[v]
            .iter()
            .map(|&k| (tree.size(blocks[k].b) as f64).ln() - scaled[k]);
        let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
        if m > f64::NEG_INFINITY {
            log_w[v] = m + terms.map(|t| (t - m).exp()).sum::<f64>().ln();
        }
    }

    let mut g = vec![0.0; n_nodes];
    let mut child_avg = vec![f64::NEG_INFINITY; n_nodes];
    for v in (0..n_nodes).rev() {
        match tree.children(v) {
            None => {
                if log_w[v] == f64::NEG_INFINITY {
                    return Err(Error::Infeasible {
                        row: tree.members(v)[0],
                    });
                }
                g[v] = log_w[v];
            }
            Some([l, r]) => {
                let (sl, sr, su) = (tree.size(l) as f64, tree.size(r) as f64, tree.size(v) as f64);
                child_avg[v] = (sl * g[l] + sr * g[r]) / su;
                g[v] = log_add(log_w[v], child_avg[v]);
            }
        }
    }

    let mut log_r = vec![0.0; n_nodes];
    for v in 0..n_nodes {
        if let Some([l, r]) = tree.children(v) {
            let down = log_r[v] + child_avg[v] - g[v];
            log_r[l] = down;
            log_r[r] = down;
        }
    }

    let log_q: Vec<f64> = blocks
        .iter()
        .zip(&scaled)
        .map(|(blk, s)| log_r[blk.a] - g[blk.a] - s)
        .collect();
    let residual = constraint_residual(tree, partition, &log_q);
    if residual.is_nan() || residual > RESIDUAL_TOL {
        return Err(Error::NotConverged { residual });
    }
    Ok(Fit {
        params: BlockParams { log_q, residual },
        d_ab,
        objective: tree.n_points() as f64 * g[tree.root()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub ell: f64,
    /// c = −N·log(N−1) + Σ φ(x_i) + Σ log p0(x_i).
    pub constant: f64,
    pub d_ab: Vec<f64>,
    /// Σ q_AB·D_AB.
    pub divergence_term: f64,
    /// −Σ |A||B|·q_AB·log q_AB.
    pub entropy: f64,
}

/// The constant part of the bound for `tree`.
pub fn bound_constant(tree: &ClusterTree) -> f64 {
    let n = tree.n_points() as f64;
    let norm = if n > 1.0 { n * (n - 1.0).ln() } else { 0.0 };
    -norm + tree.stats(tree.root()).s1 + tree.log_base_total()
}

/// Evaluates the bound for arbitrary feasible parameters.
pub fn lower_bound(params: &BlockParams, partition: &BlockPartition, tree: &ClusterTree) -> Result<BoundReport> {
    if params.len() != partition.len() {
        return Err(Error::DimensionMismatch {
            expected: partition.len(),
            got: params.len(),
        });
    }
    let d_ab = block_divergences(tree, partition);
    let mut divergence_term = 0.0;
    let mut entropy = 0.0;
    for ((blk, &lq), &d) in partition.blocks().iter().zip(&params.log_q).zip(&d_ab) {
        let q = lq.exp();
        divergence_term += q * d;
        entropy -= tree.size(blk.a) as f64 * tree.size(blk.b) as f64 * q * lq;
    }
    let constant = bound_constant(tree);
    Ok(BoundReport {
        ell: constant - divergence_term + entropy,
        constant,
        d_ab,
        divergence_term,
        entropy,
    })
}

/// −d_φ(x_i, x_j) for every j, with −∞ on the diagonal.
pub(crate) fn neg_divergence_row(points: &[crate::sparse::SparsePoint], i: usize, div: &Divergence) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(j, m)| {
            if j == i {
                f64::NEG_INFINITY
            } else {
                -div.point_divergence(&points[i], m)
            }
        })
        .collect()
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact log-likelihood of the leave-one-out mixture, O(N²).
pub fn exact_loglik(data: &SmoothedMatrix, div: &Divergence) -> Result<f64> {
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::InvalidArgument("the exact log-likelihood needs at least two points".into()));
    }
    data.check_domain(div)?;
    let points = data.points();
    let basis = StatsBasis::new(div, data.epsilon);
    let norm = ((n - 1) as f64).ln();
    let mut total = 0.0;
    for (i, x) in points.iter().enumerate() {
        let row = neg_divergence_row(&points, i, div);
        total += logsumexp(&row) + basis.phi(div, x) + basis.log_base_measure(div, x) - norm;
    }
    Ok(total)
}

/// Q expanded to an N×N row-major matrix (test scale).
pub fn dense_q(tree: &ClusterTree, partition: &BlockPartition, params: &BlockParams) -> Vec<f64> {
    let n = tree.n_points();
    let mut q = vec![0.0; n * n];
    for (blk, lq) in partition.blocks().iter().zip(&params.log_q) {
        let v = lq.exp();
        for &i in tree.members(blk.a) {
            for &j in tree.members(blk.b) {
                q[i * n + j] = v;
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DataMatrix;
    use crate::divergence::DivergenceSpec;
    use crate::partition::{coarsest_partition, finest_partition};
    use crate::sparse::SparsePoint;
    use crate::tree::build_cluster_tree;
    use approx::assert_abs_diff_eq;

    fn line(xs: &[f64]) -> SmoothedMatrix {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        crate::dataset::smooth(DataMatrix::from_dense(&rows).unwrap(), 0.0)
    }

    fn stats_of(basis: &StatsBasis, div: &Divergence, pts: &[Vec<f64>]) -> NodeStats {
        pts.iter()
            .map(|p| NodeStats::point(basis, div, &SparsePoint::from_dense(p, basis.epsilon)))
            .reduce(|a, b| a.merge(&b))
            .unwrap()
    }

    #[test]
    fn singleton_gid_block() {
        let div = DivergenceSpec::gid(2, 0.0).build().unwrap();
        let basis = StatsBasis::new(&div, 0.0);
        let a = stats_of(&basis, &div, &[vec![1.0, 2.0]]);
        let b = stats_of(&basis, &div, &[vec![2.0, 1.0]]);
        assert_abs_diff_eq!(block_divergence_sum(&a, &b, &basis), std::f64::consts::LN_2, epsilon = 1e-6);
    }

    #[test]
    fn euclidean_block_sum() {
        let div = DivergenceSpec::sq_euclidean(2, 1.0).build().unwrap();
        let basis = StatsBasis::new(&div, 0.0);
        let a = stats_of(&basis, &div, &[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let b = stats_of(&basis, &div, &[vec![3.0, 0.0]]);
        assert_abs_diff_eq!(block_divergence_sum(&a, &b, &basis), 6.5, epsilon = 1e-12);
        let same = stats_of(&basis, &div, &[vec![3.0, 0.0], vec![3.0, 0.0]]);
        assert_abs_diff_eq!(block_divergence_sum(&same, &b, &basis), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn two_points_have_unit_parameters() {
        let data = line(&[0.0, 1.0]);
        let div = DivergenceSpec::sq_euclidean(1, 1.0).build().unwrap();
        let tree = build_cluster_tree(&data, &div).unwrap();
        let p = coarsest_partition(&tree).unwrap();
        let fit = optimize_q(&tree, &p).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(fit.params.q(k), 1.0, epsilon = 1e-15);
        }
        let report = lower_bound(&fit.params, &p, &tree).unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln() - 1.0;
        assert_abs_diff_eq!(report.ell, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(report.ell, report.constant + fit.objective, epsilon = 1e-12);
        assert_abs_diff_eq!(exact_loglik(&data, &div).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn three_points_leaf_against_pair() {
        let data = line(&[0.0, 1.0, 10.0]);
        let div = DivergenceSpec::sq_euclidean(1, 1.0).build().unwrap();
        let tree = build_cluster_tree(&data, &div).unwrap();
        let p = coarsest_partition(&tree).unwrap();
        let fit = optimize_q(&tree, &p).unwrap();
        let lone = tree.leaf_of_row(2);
        let k = p.blocks().iter().position(|b| b.a == lone).unwrap();
        assert_eq!(tree.size(p.blocks()[k].b), 2);
        assert_abs_diff_eq!(fit.params.q(k), 0.5, epsilon = 1e-15);
        assert!(fit.params.residual <= RESIDUAL_TOL);
    }

    #[test]
    fn finest_partition_reproduces_softmax() {
        let data = line(&[0.0, 0.3, 1.1, 2.0, 4.5]);
        let div = DivergenceSpec::sq_euclidean(1, 1.0).build().unwrap();
        let tree = build_cluster_tree(&data, &div).unwrap();
        let p = finest_partition(&tree, 100).unwrap();
        let fit = optimize_q(&tree, &p).unwrap();
        let q = dense_q(&tree, &p, &fit.params);
        let points = data.points();
        for i in 0..5 {
            let row = neg_divergence_row(&points, i, &div);
            let z = logsumexp(&row);
            for j in 0..5 {
                assert_abs_diff_eq!(q[i * 5 + j], (row[j] - z).exp(), epsilon = 1e-12);
            }
        }
        let report = lower_bound(&fit.params, &p, &tree).unwrap();
        assert_abs_diff_eq!(report.ell, exact_loglik(&data, &div).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn identical_points_loglik() {
        let data = line(&[2.0, 2.0]);
        let div = DivergenceSpec::sq_euclidean(1, 1.0).build().unwrap();
        let per_point = -2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln() + 2.0;
        assert_abs_diff_eq!(exact_loglik(&data, &div).unwrap(), 2.0 * per_point, epsilon = 1e-12);
        assert!(exact_loglik(&line(&[1.0]), &div).is_err());
    }

    #[test]
    fn far_points_stay_finite() {
        let data = line(&[0.0, 150.0, 300.0]);
        let div = DivergenceSpec::sq_euclidean(1, 1.0).build().unwrap();
        assert!(exact_loglik(&data, &div).unwrap().is_finite());
        let tree = build_cluster_tree(&data, &div).unwrap();
        let fit = optimize_q(&tree, &coarsest_partition(&tree).unwrap()).unwrap();
        assert!(fit.objective.is_finite());
    }

    #[test]
    fn missing_leaf_block_is_infeasible() {
        let data = line(&[0.0, 1.0, 10.0]);
        let div = DivergenceSpec::sq_euclidean(1, 1.0).build().unwrap();
        let tree = build_cluster_tree(&data, &div).unwrap();
        let p = coarsest_partition(&tree).unwrap();
        let lone = tree.leaf_of_row(0);
        let kept = p.blocks().iter().copied().filter(|b| b.a != lone).collect();
        let broken = BlockPartition::from_blocks(kept);
        assert!(matches!(optimize_q(&tree, &broken), Err(Error::Infeasible { row: 0 })));
    }
}
