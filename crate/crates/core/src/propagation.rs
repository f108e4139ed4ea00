//! Transition operators and label propagation.
//!
//! Propagation iterates y ← α·M·y + (1−α)·y0 independently per class
//! column, with M either the blocked approximation Q or the exact dense P.

use serde::{Deserialize, Serialize};

use crate::dataset::SmoothedMatrix;
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::partition::BlockPartition;
use crate::tree::ClusterTree;
use crate::variational::{logsumexp, neg_divergence_row, BlockParams};

/// Default row-count cap for the dense baseline.
pub const DEFAULT_DENSE_CAP: usize = 8192;

/// A row-stochastic N×N operator applied to vectors.
pub trait TransitionOperator: Send + Sync {
    fn n(&self) -> usize;
    fn apply_into(&self, v: &[f64], out: &mut [f64]);

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: v.len(),
            });
        }
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        Ok(out)
    }
}

/// Q as a tree, a partition and one parameter per block.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    tree: ClusterTree,
    partition: BlockPartition,
    q: Vec<f64>,
    by_node: Vec<Vec<usize>>,
}

impl TransitionModel {
    pub fn new(tree: ClusterTree, partition: BlockPartition, params: &BlockParams) -> Result<Self> {
        if params.len() != partition.len() {
            return Err(Error::DimensionMismatch {
                expected: partition.len(),
                got: params.len(),
            });
        }
        let by_node = partition.by_row_node(&tree);
        Ok(TransitionModel {
            q: params.values(),
            tree,
            partition,
            by_node,
        })
    }

    pub fn tree(&self) -> &ClusterTree {
        &self.tree
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    /// Qv in O(|B| + N).
    pub fn blocked_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.apply(v)
    }
}

impl TransitionOperator for TransitionModel {
    fn n(&self) -> usize {
        self.tree.n_points()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let t = &self.tree;
        let mut sums = vec![0.0; t.len()];
        for id in (0..t.len()).rev() {
            sums[id] = match t.children(id) {
                Some([l, r]) => sums[l] + sums[r],
                None => t.members(id).iter().map(|&i| v[i]).sum(),
            };
        }
        let blocks = self.partition.blocks();
        let mut acc = vec![0.0; t.len()];
        for id in 0..t.len() {
            let inherited = t.parent(id).map_or(0.0, |p| acc[p]);
            let own: f64 = self.by_node[id].iter().map(|&k| self.q[k] * sums[blocks[k].b]).sum();
            acc[id] = inherited + own;
            if t.children(id).is_none() {
                for &i in t.members(id) {
                    out[i] = acc[id];
                }
            }
        }
    }
}

/// The exact transition matrix P, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBaseline {
    n: usize,
    p: Vec<f64>,
}

impl DenseBaseline {
    pub fn from_matrix(n: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: p.len(),
            });
        }
        Ok(DenseBaseline { n, p })
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.n..(i + 1) * self.n]
    }
}

impl TransitionOperator for DenseBaseline {
    fn n(&self) -> usize {
        self.n
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(v).map(|(p, x)| p * x).sum();
        }
    }
}

/// p_ij ∝ exp(−d_φ(x_i, x_j)) over j ≠ i, normalized per row in log space.
pub fn dense_transition_matrix(data: &SmoothedMatrix, div: &Divergence, cap: usize) -> Result<DenseBaseline> {
    let n = data.n_rows();
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    if n < 2 {
        return Err(Error::InvalidArgument("a transition matrix needs at least two points".into()));
    }
    data.check_domain(div)?;
    let points = data.points();
    let mut p = Vec::with_capacity(n * n);
    for i in 0..n {
        let row = neg_divergence_row(&points, i, div);
        let z = logsumexp(&row);
        p.extend(row.iter().map(|l| (l - z).exp()));
    }
    Ok(DenseBaseline { n, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            alpha: 0.01,
            iterations: 300,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Initial label columns: one-hot rows for labeled points, zero elsewhere.
pub fn initial_labels(labels: &[Option<usize>], n_classes: usize) -> Result<Vec<Vec<f64>>> {
    let mut y0 = vec![vec![0.0; labels.len()]; n_classes];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            let col = y0.get_mut(c).ok_or_else(|| {
                Error::InvalidArgument(format!("class {c} out of range for {n_classes} classes"))
            })?;
            col[i] = 1.0;
        }
    }
    Ok(y0)
}

/// Runs the iteration on each class column of `y0` (C columns of length N).
pub fn propagate_labels(op: &dyn TransitionOperator, y0: &[Vec<f64>], config: &PropagationConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if y0.is_empty() {
        return Err(Error::InvalidArgument("label matrix has no class columns".into()));
    }
    let n = op.n();
    let mut out = Vec::with_capacity(y0.len());
    let mut buf = vec![0.0; n];
    for col in y0 {
        if col.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: col.len(),
            });
        }
        let mut y = col.clone();
        for _ in 0..config.iterations {
            op.apply_into(&y, &mut buf);
            for ((yi, mi), y0i) in y.iter_mut().zip(&buf).zip(col) {
                *yi = config.alpha * mi + (1.0 - config.alpha) * y0i;
            }
        }
        out.push(y);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub classes: Vec<usize>,
    /// The winning score per row.
    pub scores: Vec<f64>,
    /// Rows whose scores are all zero (no label mass arrived).
    pub unreached: Vec<bool>,
}

/// Per-row argmax over class columns, ties to the lowest class index.
pub fn classify_one_vs_all(scores: &[Vec<f64>]) -> Result<Classification> {
    let n = scores
        .first()
        .ok_or_else(|| Error::InvalidArgument("no class columns to classify".into()))?
        .len();
    let mut out = Classification {
        classes: Vec::with_capacity(n),
        scores: Vec::with_capacity(n),
        unreached: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut best = 0;
        for c in 1..scores.len() {
            if scores[c][i] > scores[best][i] {
                best = c;
            }
        }
        out.classes.push(best);
        out.scores.push(scores[best][i]);
        out.unreached.push(scores.iter().all(|col| col[i] == 0.0));
    }
    Ok(out)
}

/// Accuracy over rows not in the labeled set.
pub fn evaluate_accuracy(pred: &[usize], truth: &[usize], labeled: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || labeled.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len().min(labeled.len()),
        });
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for ((p, t), &l) in pred.iter().zip(truth).zip(labeled) {
        if !l {
            total += 1;
            hit += usize::from(p == t);
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("every row is labeled; accuracy is undefined".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Accuracy over unlabeled rows of each true class (None when a class has
/// no unlabeled rows).
pub fn per_class_accuracy(pred: &[usize], truth: &[usize], labeled: &[bool], n_classes: usize) -> Vec<Option<f64>> {
    let mut hit = vec![0usize; n_classes];
    let mut total = vec![0usize; n_classes];
    for ((p, &t), &l) in pred.iter().zip(truth).zip(labeled) {
        if !l && t < n_classes {
            total[t] += 1;
            hit[t] += usize::from(*p == t);
        }
    }
    hit.iter()
        .zip(&total)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect()
}
