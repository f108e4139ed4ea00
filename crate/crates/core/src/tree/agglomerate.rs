//! Agglomeration of anchors by minimum merge cost
//! Δ(A, B) = |A|·d_φ(μ_A, μ_C) + |B|·d_φ(μ_B, μ_C), with μ_C the
//! size-weighted mean of the two.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;

use super::anchors::Anchor;
use super::stats::StatsBasis;
use crate::dataset::SmoothedMatrix;
use crate::divergence::{Divergence, DivergenceSpec};
use crate::error::{Error, Result};
use crate::sparse::{SparsePoint, SparseVec};

/// A cluster taking part in agglomeration: its size and Σ (x − ε).
#[derive(Debug, Clone)]
pub(crate) struct Cluster {
    pub size: usize,
    pub excess: SparseVec,
}

impl Cluster {
    pub fn from_rows(points: &[SparsePoint], rows: impl Iterator<Item = usize>) -> Self {
        let mut size = 0;
        let mut excess = SparseVec::new();
        for i in rows {
            let p = &points[i];
            let shifted = SparseVec {
                idx: p.coords.idx.clone(),
                val: p.coords.val.iter().map(|v| v - p.base).collect(),
            };
            excess = excess.add(&shifted);
            size += 1;
        }
        Cluster { size, excess }
    }
}

pub(crate) fn cluster_merge_cost(div: &Divergence, basis: &StatsBasis, a: &Cluster, b: &Cluster) -> f64 {
    let merged = a.excess.add(&b.excess);
    let mc = basis.mean_point(a.size + b.size, &merged);
    let ma = basis.mean_point(a.size, &a.excess);
    let mb = basis.mean_point(b.size, &b.excess);
    a.size as f64 * div.point_divergence(&ma, &mc) + b.size as f64 * div.point_divergence(&mb, &mc)
}

/// Merge cost of two clusters given their sizes and pivots (means).
pub fn merge_cost(spec: &DivergenceSpec, size_a: usize, pivot_a: &[f64], size_b: usize, pivot_b: &[f64]) -> Result<f64> {
    let div = spec.build()?;
    div.check_point(pivot_a)?;
    div.check_point(pivot_b)?;
    let (na, nb) = (size_a as f64, size_b as f64);
    let parent: Vec<f64> = pivot_a
        .iter()
        .zip(pivot_b)
        .map(|(a, b)| (na * a + nb * b) / (na + nb))
        .collect();
    Ok(na * div.divergence_unchecked(pivot_a, &parent) + nb * div.divergence_unchecked(pivot_b, &parent))
}

/// One agglomeration step; the new cluster gets id `n_leaves + step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub cost: f64,
}

/// Binary merge tree over anchors `0..n_leaves`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeTree {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl MergeTree {
    pub fn root(&self) -> usize {
        self.n_leaves + self.merges.len() - usize::from(self.n_leaves > 0)
    }
}

pub(crate) fn agglomerate(div: &Divergence, basis: &StatsBasis, leaves: Vec<Cluster>) -> Result<MergeTree> {
    let n = leaves.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot agglomerate zero anchors".into()));
    }
    let mut clusters: Vec<Option<Cluster>> = leaves.into_iter().map(Some).collect();
    let mut heap = BinaryHeap::new();
    for a in 0..n {
        for b in a + 1..n {
            let cost = cluster_merge_cost(div, basis, clusters[a].as_ref().unwrap(), clusters[b].as_ref().unwrap());
            heap.push(Reverse((OrderedFloat(cost), a, b)));
        }
    }
    let mut merges = Vec::with_capacity(n - 1);
    while merges.len() + 1 < n {
        let Reverse((OrderedFloat(cost), a, b)) = heap.pop().expect("pairs remain while clusters remain");
        // stale entry: one side was already merged
        if clusters[a].is_none() || clusters[b].is_none() {
            continue;
        }
        let ca = clusters[a].take().unwrap();
        let cb = clusters[b].take().unwrap();
        let merged = Cluster {
            size: ca.size + cb.size,
            excess: ca.excess.add(&cb.excess),
        };
        let id = clusters.len();
        for (other, c) in clusters.iter().enumerate() {
            if let Some(c) = c {
                let cost = cluster_merge_cost(div, basis, c, &merged);
                heap.push(Reverse((OrderedFloat(cost), other, id)));
            }
        }
        clusters.push(Some(merged));
        merges.push(Merge { left: a, right: b, cost });
    }
    Ok(MergeTree { n_leaves: n, merges })
}

/// Agglomerates anchors grown over `data` into a single binary tree.
pub fn agglomerate_anchors(data: &SmoothedMatrix, anchors: &[Anchor], div: &Divergence) -> Result<MergeTree> {
    let points = data.points();
    let basis = StatsBasis::new(div, data.epsilon);
    let leaves = anchors.iter().map(|a| Cluster::from_rows(&points, a.rows())).collect();
    agglomerate(div, &basis, leaves)
}
