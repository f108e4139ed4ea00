//! Independent reference computations shared by the integration tests.
//! Everything here works on dense rows with textbook formulas and never
//! calls into the library's divergence or statistics code.
#![allow(dead_code)]

use std::f64::consts::PI;

use dualtree::dataset::{smooth, DataMatrix, SmoothedMatrix};
use dualtree::divergence::DivergenceKind;
use dualtree::partition::BlockPartition;
use dualtree::tree::ClusterTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use statrs::function::gamma::ln_gamma;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Oracle divergence parameters.
#[derive(Debug, Clone)]
pub struct Ref {
    pub kind: DivergenceKind,
    pub sigma: f64,
    pub cov: Vec<f64>,
}

impl Ref {
    pub fn new(kind: DivergenceKind) -> Self {
        Ref {
            kind,
            sigma: 1.0,
            cov: Vec::new(),
        }
    }

    pub fn sigma(sigma: f64) -> Self {
        Ref {
            sigma,
            ..Ref::new(DivergenceKind::SqEuclidean)
        }
    }

    pub fn div(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..x.len() {
            let (a, b) = (x[j], y[j]);
            s += match self.kind {
                DivergenceKind::SqEuclidean => (a - b).powi(2) / (2.0 * self.sigma * self.sigma),
                DivergenceKind::Mahalanobis => (a - b).powi(2) / self.cov[j],
                DivergenceKind::Gid | DivergenceKind::Kl => {
                    let t = if a == 0.0 { 0.0 } else { a * (a / b).ln() };
                    t - a + b
                }
                DivergenceKind::ItakuraSaito => a / b - (a / b).ln() - 1.0,
                DivergenceKind::Logistic => a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln(),
            };
        }
        s
    }

    /// φ(x) + log p0(x) for the two kinds with a normalized density.
    pub fn log_normalizer_terms(&self, x: &[f64]) -> f64 {
        match self.kind {
            DivergenceKind::SqEuclidean => -0.5 * x.len() as f64 * (2.0 * PI * self.sigma * self.sigma).ln(),
            DivergenceKind::Gid => x.iter().map(|&a| a * a.ln() - a - ln_gamma(a + 1.0)).sum(),
            k => panic!("no reference density for {k}"),
        }
    }
}

/// N×d Poisson counts with the given mean per cell.
pub fn random_counts(seed: u64, n: usize, d: usize, mean: f64) -> DataMatrix {
    let mut r = rng(seed);
    let pois = Poisson::new(mean).unwrap();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| pois.sample(&mut r)).collect()).collect();
    DataMatrix::from_dense(&rows).unwrap()
}

pub fn random_smoothed(seed: u64, n: usize, d: usize, mean: f64, eps: f64) -> SmoothedMatrix {
    smooth(random_counts(seed, n, d, mean), eps)
}

pub fn dense_rows(data: &SmoothedMatrix) -> Vec<Vec<f64>> {
    (0..data.n_rows())
        .map(|i| {
            let mut row = vec![data.epsilon; data.n_cols()];
            for (j, v) in data.base.row(i).iter() {
                row[j] += v;
            }
            row
        })
        .collect()
}

pub fn brute_block_sum(r: &Ref, rows: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| r.div(&rows[i], &rows[j])).sum()
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Row-softmax of −d over j ≠ i, row-major.
pub fn softmax_p(r: &Ref, rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let logits: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| -r.div(&rows[i], &rows[j])).collect();
        let z = logsumexp(&logits);
        for j in (0..n).filter(|&j| j != i) {
            p[i * n + j] = (-r.div(&rows[i], &rows[j]) - z).exp();
        }
    }
    p
}

pub fn exact_loglik(r: &Ref, rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    (0..n)
        .map(|i| {
            let logits: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| -r.div(&rows[i], &rows[j])).collect();
            logsumexp(&logits) + r.log_normalizer_terms(&rows[i]) - ((n - 1) as f64).ln()
        })
        .sum()
}

/// Q expanded block by block, row-major.
pub fn expand_q(tree: &ClusterTree, p: &BlockPartition, q: &[f64]) -> Vec<f64> {
    let n = tree.n_points();
    let mut out = vec![0.0; n * n];
    for (blk, &v) in p.blocks().iter().zip(q) {
        for &i in tree.members(blk.a) {
            for &j in tree.members(blk.b) {
                out[i * n + j] = v;
            }
        }
    }
    out
}

/// Per-row Σ_j Q_ij − 1, worst case.
pub fn row_residual(q_dense: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|i| (q_dense[i * n..(i + 1) * n].iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Maximizes −Σ q·D − Σ w·q·log q subject to C·q = 1 by damped Newton
/// ascent projected onto the constraint set, starting from the uniform
/// point q = 1/(N−1) (feasible for every valid partition). Each step also
/// cancels the current constraint residual so rounding never accumulates.
pub fn concave_oracle(w: &[f64], d: &[f64], c: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    use nalgebra::DVector;
    let n = c.nrows();
    let m = w.len();
    let f = |q: &[f64]| -> f64 { (0..m).map(|b| -q[b] * d[b] - w[b] * q[b] * q[b].ln()).sum() };
    let mut q = vec![1.0 / (n - 1) as f64; m];
    for _ in 0..2000 {
        let g: Vec<f64> = (0..m).map(|b| -d[b] - w[b] * (q[b].ln() + 1.0)).collect();
        // H = diag(−w/q), so H⁻¹ = diag(−q/w)
        let hinv: Vec<f64> = (0..m).map(|b| -q[b] / w[b]).collect();
        let scaled_ct = nalgebra::DMatrix::from_fn(m, n, |b, i| hinv[b] * c[(i, b)]);
        let schur = c * &scaled_ct;
        let hg = DVector::from_iterator(m, (0..m).map(|b| hinv[b] * g[b]));
        let resid = c * DVector::from_column_slice(&q) - DVector::from_element(n, 1.0);
        let rhs = resid - c * hg;
        let nu = (-&schur).cholesky().expect("constraint rows are independent").solve(&(-rhs));
        let ctnu = c.transpose() * nu;
        let step: Vec<f64> = (0..m).map(|b| hinv[b] * (-g[b] - ctnu[b])).collect();
        let decrement: f64 = (0..m).map(|b| step[b] * step[b] * w[b] / q[b]).sum();
        if decrement < 1e-24 {
            break;
        }
        let slope: f64 = (0..m).map(|b| g[b] * step[b]).sum();
        let f0 = f(&q);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = (0..m).map(|b| q[b] + t * step[b]).collect();
            if cand.iter().all(|&v| v > 0.0) && f(&cand) >= f0 + 0.25 * t * slope {
                q = cand;
                break;
            }
            t *= 0.5;
            if t < 1e-30 {
                return q;
            }
        }
    }
    q
}

/// Constraint matrix C[i, b] = |B_b| when row i lies in A_b.
pub fn constraint_matrix(tree: &ClusterTree, p: &BlockPartition) -> nalgebra::DMatrix<f64> {
    let mut c = nalgebra::DMatrix::zeros(tree.n_points(), p.len());
    for (b, blk) in p.blocks().iter().enumerate() {
        for &i in tree.members(blk.a) {
            c[(i, b)] = tree.members(blk.b).len() as f64;
        }
    }
    c
}
