//! Anchor growing with Bregman stealing thresholds.

use std::cmp::Ordering;

use crate::dataset::SmoothedMatrix;
use crate::divergence::{Divergence, DivergenceSpec};
use crate::error::{Error, Result};
use crate::sparse::{for_each_union, SparsePoint, SparseVec};

/// A pivot row and its members, sorted by nonincreasing divergence to the
/// pivot (ties by row index).
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub pivot: usize,
    /// `(d_φ(x, pivot), row)` pairs.
    pub members: Vec<(f64, usize)>,
}

impl Anchor {
    pub fn radius(&self) -> f64 {
        self.members.first().map_or(0.0, |m| m.0)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().map(|m| m.1)
    }
}

fn by_decreasing_divergence(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Stealing threshold between a current and a new pivot, with the
/// minimizer y* = ∇φ⁻¹(½(∇φ(p_curr) + ∇φ(p_new))).
///
/// Any x with d_φ(x, p_curr) ≤ threshold satisfies
/// d_φ(x, p_curr) ≤ d_φ(x, p_new).
pub fn point_steal_threshold(div: &Divergence, p_curr: &SparsePoint, p_new: &SparsePoint) -> (f64, SparsePoint) {
    let g = div.generator();
    let mut coords = SparseVec::with_capacity(p_curr.coords.nnz().max(p_new.coords.nnz()));
    for_each_union(p_curr, p_new, |j, a, b| {
        let y = if a == b { a } else { g.grad_inv(j, 0.5 * (g.grad(j, a) + g.grad(j, b))) };
        coords.push(j, y);
    });
    let y = SparsePoint {
        base: p_curr.base,
        coords,
    };
    let t = 0.5 * (div.point_divergence(&y, p_curr) + div.point_divergence(&y, p_new));
    (t, y)
}

/// Dense, domain-checked form of [`point_steal_threshold`].
pub fn steal_threshold(spec: &DivergenceSpec, p_curr: &[f64], p_new: &[f64]) -> Result<(f64, Vec<f64>)> {
    let div = spec.build()?;
    div.check_point(p_curr)?;
    div.check_point(p_new)?;
    let g_curr = div.grad_phi(p_curr)?;
    let g_new = div.grad_phi(p_new)?;
    let mid: Vec<f64> = g_curr.iter().zip(&g_new).map(|(a, b)| 0.5 * (a + b)).collect();
    let y = div.grad_phi_inv(&mid)?;
    let t = 0.5 * (div.divergence_unchecked(&y, p_curr) + div.divergence_unchecked(&y, p_new));
    Ok((t, y))
}

/// Grows up to `m` anchors over `scope`.
///
/// The first pivot is the lowest row index in scope; each further pivot is
/// the member farthest from its own pivot (ties to the lowest row). Growing
/// stops early if every remaining point coincides with its pivot.
pub(crate) fn grow(
    points: &[SparsePoint],
    scope: &[usize],
    m: usize,
    div: &Divergence,
    prune: bool,
) -> Result<Vec<Anchor>> {
    if m == 0 || m > scope.len() {
        return Err(Error::InvalidArgument(format!(
            "anchor count must be in 1..={}, got {m}",
            scope.len()
        )));
    }
    let first = *scope.iter().min().expect("nonempty scope");
    let mut members: Vec<(f64, usize)> = scope
        .iter()
        .map(|&i| (div.point_divergence(&points[i], &points[first]), i))
        .collect();
    members.sort_by(by_decreasing_divergence);
    let mut anchors = vec![Anchor { pivot: first, members }];

    while anchors.len() < m {
        let (radius, new_pivot) = anchors
            .iter()
            .map(|a| a.members[0])
            .min_by(by_decreasing_divergence)
            .expect("at least one anchor");
        if radius <= 0.0 {
            break;
        }
        let q = &points[new_pivot];
        let mut stolen = Vec::new();
        for anchor in anchors.iter_mut() {
            let p = &points[anchor.pivot];
            let threshold = if prune {
                point_steal_threshold(div, p, q).0
            } else {
                f64::NEG_INFINITY
            };
            let mut kept = Vec::with_capacity(anchor.members.len());
            let mut rest = anchor.members.len();
            for (k, &(dp, x)) in anchor.members.iter().enumerate() {
                if dp <= threshold {
                    rest = k;
                    break;
                }
                let dq = div.point_divergence(&points[x], q);
                if dq < dp {
                    stolen.push((dq, x));
                } else {
                    kept.push((dp, x));
                }
            }
            if rest < anchor.members.len() {
                kept.extend_from_slice(&anchor.members[rest..]);
            }
            anchor.members = kept;
        }
        stolen.sort_by(by_decreasing_divergence);
        anchors.push(Anchor {
            pivot: new_pivot,
            members: stolen,
        });
    }
    Ok(anchors)
}

/// Grows `m` anchors over every row of `data`.
pub fn grow_anchors(data: &SmoothedMatrix, div: &Divergence, m: usize) -> Result<Vec<Anchor>> {
    data.check_domain(div)?;
    let scope: Vec<usize> = (0..data.n_rows()).collect();
    grow(&data.points(), &scope, m, div, true)
}
