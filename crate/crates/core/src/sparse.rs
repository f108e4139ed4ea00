//! Sparse vectors with an implicit fill value.
//!
//! Smoothed count rows, subtree means and stealing-threshold minimizers all
//! share one shape: every coordinate equals a common `base` value except for
//! a short list of stored coordinates. Divergences between two such points
//! only need the union of their stored coordinates, because a separable
//! Bregman divergence vanishes on coordinates where both points equal the
//! base value.

use serde::{Deserialize, Serialize};

/// Sorted sparse vector with implicit zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        SparseVec {
            idx: Vec::with_capacity(cap),
            val: Vec::with_capacity(cap),
        }
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().map(|&j| j as usize).zip(self.val.iter().copied())
    }

    pub fn push(&mut self, j: usize, v: f64) {
        debug_assert!(self.idx.last().is_none_or(|&last| (last as usize) < j));
        self.idx.push(j as u32);
        self.val.push(v);
    }

    pub fn sum(&self) -> f64 {
        self.val.iter().sum()
    }

    /// Coordinatewise sum of two sparse vectors.
    pub fn add(&self, other: &SparseVec) -> SparseVec {
        let mut out = SparseVec::with_capacity(self.nnz().max(other.nnz()));
        let (mut a, mut b) = (0, 0);
        while a < self.nnz() && b < other.nnz() {
            let (ja, jb) = (self.idx[a], other.idx[b]);
            if ja < jb {
                out.idx.push(ja);
                out.val.push(self.val[a]);
                a += 1;
            } else if jb < ja {
                out.idx.push(jb);
                out.val.push(other.val[b]);
                b += 1;
            } else {
                out.idx.push(ja);
                out.val.push(self.val[a] + other.val[b]);
                a += 1;
                b += 1;
            }
        }
        out.idx.extend_from_slice(&self.idx[a..]);
        out.val.extend_from_slice(&self.val[a..]);
        out.idx.extend_from_slice(&other.idx[b..]);
        out.val.extend_from_slice(&other.val[b..]);
        out
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.nnz() && b < other.nnz() {
            match self.idx[a].cmp(&other.idx[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.val[a] * other.val[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(j, v)| v * dense[j]).sum()
    }
}

/// A point whose coordinates equal `base` except at the stored entries.
/// Stored values are full coordinate values, not offsets from `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint {
    pub base: f64,
    pub coords: SparseVec,
}

impl SparsePoint {
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![self.base; dim];
        for (j, v) in self.coords.iter() {
            out[j] = v;
        }
        out
    }

    pub fn from_dense(x: &[f64], base: f64) -> Self {
        let mut coords = SparseVec::new();
        for (j, &v) in x.iter().enumerate() {
            if v != base {
                coords.push(j, v);
            }
        }
        SparsePoint { base, coords }
    }
}

/// Walks the union of the stored coordinates of two points that share a
/// base value, calling `f(j, x_j, y_j)` once per coordinate in the union.
pub fn for_each_union(x: &SparsePoint, y: &SparsePoint, mut f: impl FnMut(usize, f64, f64)) {
    let (xs, ys) = (&x.coords, &y.coords);
    let (mut a, mut b) = (0, 0);
    while a < xs.nnz() && b < ys.nnz() {
        let (ja, jb) = (xs.idx[a], ys.idx[b]);
        if ja < jb {
            f(ja as usize, xs.val[a], y.base);
            a += 1;
        } else if jb < ja {
            f(jb as usize, x.base, ys.val[b]);
            b += 1;
        } else {
            f(ja as usize, xs.val[a], ys.val[b]);
            a += 1;
            b += 1;
        }
    }
    for k in a..xs.nnz() {
        f(xs.idx[k] as usize, xs.val[k], y.base);
    }
    for k in b..ys.nnz() {
        f(ys.idx[k] as usize, x.base, ys.val[k]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(pairs: &[(usize, f64)]) -> SparseVec {
        let mut v = SparseVec::new();
        for &(j, x) in pairs {
            v.push(j, x);
        }
        v
    }

    #[test]
    fn add_and_dot_merge_supports() {
        let a = sv(&[(0, 1.0), (3, 2.0)]);
        let b = sv(&[(1, 5.0), (3, 4.0), (7, 1.0)]);
        let s = a.add(&b);
        assert_eq!(s.idx, vec![0, 1, 3, 7]);
        assert_eq!(s.val, vec![1.0, 5.0, 6.0, 1.0]);
        assert_eq!(a.dot(&b), 8.0);
        assert_eq!(a.dot_dense(&[1.0, 0.0, 0.0, 0.5]), 2.0);
    }

    #[test]
    fn union_visits_each_coordinate_once() {
        let x = SparsePoint { base: 0.5, coords: sv(&[(1, 2.5)]) };
        let y = SparsePoint { base: 0.5, coords: sv(&[(0, 1.5), (1, 3.5)]) };
        let mut seen = Vec::new();
        for_each_union(&x, &y, |j, a, b| seen.push((j, a, b)));
        assert_eq!(seen, vec![(0, 0.5, 1.5), (1, 2.5, 3.5)]);
        assert_eq!(x.to_dense(3), vec![0.5, 2.5, 0.5]);
        assert_eq!(SparsePoint::from_dense(&[0.5, 2.5, 0.5], 0.5), x);
    }
}
