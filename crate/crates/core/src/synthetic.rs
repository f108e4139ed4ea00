//! Poisson-length multinomial mixture corpora.
//!
//! Each document picks a component k uniformly, draws its length
//! L ~ Poisson(λ_k) and then term counts ~ Multinomial(L, α_k). Sampling uses
//! ChaCha8 seeded from `seed`, and the multinomial is drawn by sequential
//! conditional binomials, so output is reproducible across platforms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::dataset::{DataMatrix, LabelSet};
use crate::error::{Error, Result};
use crate::sparse::SparseVec;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Term probabilities, one row per component.
    pub alphas: Vec<Vec<f64>>,
    /// Mean document length per component.
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    pub fn dim(&self) -> usize {
        self.alphas.first().map_or(0, Vec::len)
    }

    /// Components with disjoint "topic" vocabularies sharing a common
    /// Zipf-shaped background.
    ///
    /// Terms are split into `k` equal topic blocks; component k puts
    /// `1 − background` of its mass uniformly on block k and `background`
    /// on a Zipf(1) distribution over the whole vocabulary.
    pub fn topics(k: usize, dim: usize, lambda: f64, background: f64, n: usize, seed: u64) -> Result<Self> {
        if k == 0 || dim < k {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k <= dim, got k={k}, dim={dim}"
            )));
        }
        if !(0.0..1.0).contains(&background) {
            return Err(Error::InvalidArgument(format!("background weight must be in [0,1), got {background}")));
        }
        let zipf: Vec<f64> = (0..dim).map(|j| 1.0 / (j as f64 + 1.0)).collect();
        let zsum: f64 = zipf.iter().sum();
        let block = dim / k;
        let alphas = (0..k)
            .map(|c| {
                let lo = c * block;
                let hi = if c + 1 == k { dim } else { lo + block };
                let topic = (1.0 - background) / (hi - lo) as f64;
                let mut a: Vec<f64> = zipf.iter().map(|z| background * z / zsum).collect();
                a[lo..hi].iter_mut().for_each(|v| *v += topic);
                let s: f64 = a.iter().sum();
                a.iter_mut().for_each(|v| *v /= s);
                a
            })
            .collect();
        Ok(SyntheticSpec {
            alphas,
            lambdas: vec![lambda; k],
            n,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.n == 0 {
            return Err(Error::InvalidArgument("need at least one component and one row".into()));
        }
        if self.lambdas.len() != self.alphas.len() {
            return Err(Error::DimensionMismatch {
                expected: self.alphas.len(),
                got: self.lambdas.len(),
            });
        }
        let d = self.dim();
        for (k, a) in self.alphas.iter().enumerate() {
            if a.len() != d || d == 0 {
                return Err(Error::DimensionMismatch { expected: d, got: a.len() });
            }
            let sum: f64 = a.iter().sum();
            if a.iter().any(|p| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "alpha {k} must be a probability vector (sum {sum})"
                )));
            }
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!("lengths must be positive, got {l}")));
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DataMatrix, LabelSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.k();
    let poissons: Vec<Poisson<f64>> = spec
        .lambdas
        .iter()
        .map(|&l| Poisson::new(l).map_err(|e| Error::InvalidArgument(e.to_string())))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(spec.n);
    let mut assignments = BTreeMap::new();
    for i in 0..spec.n {
        let c = rng.random_range(0..k);
        let len = poissons[c].sample(&mut rng) as u64;
        rows.push(sample_multinomial(&mut rng, len, &spec.alphas[c]));
        assignments.insert((i + 1).to_string(), c);
    }
    let data = DataMatrix::with_default_ids(spec.dim(), rows)?;
    let labels = LabelSet {
        assignments,
        classes: (0..k).map(|c| format!("c{c}")).collect(),
    };
    Ok((data, labels))
}

fn sample_multinomial(rng: &mut impl Rng, n: u64, probs: &[f64]) -> SparseVec {
    let mut out = SparseVec::new();
    let mut remaining = n;
    let mut mass = 1.0;
    for (j, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let x = if j + 1 == probs.len() || p >= mass {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        if x > 0 {
            out.push(j, x as f64);
        }
        remaining -= x;
        mass -= p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_mean_length() {
        let spec = SyntheticSpec {
            alphas: vec![vec![0.25; 4]],
            lambdas: vec![10.0],
            n: 1000,
            seed: 11,
        };
        let (data, _) = generate_synthetic(&spec).unwrap();
        let mean = data.rows().iter().map(SparseVec::sum).sum::<f64>() / 1000.0;
        assert!((mean - 10.0).abs() < 0.5, "mean length {mean}");
    }

    #[test]
    fn disjoint_supports_are_respected() {
        let spec = SyntheticSpec {
            alphas: vec![vec![0.5, 0.5, 0.0, 0.0], vec![0.0, 0.0, 0.3, 0.7]],
            lambdas: vec![20.0, 20.0],
            n: 300,
            seed: 2,
        };
        let (data, labels) = generate_synthetic(&spec).unwrap();
        for (i, row) in data.rows().iter().enumerate() {
            let c = labels.get(&data.ids()[i]).unwrap();
            assert!(row.iter().all(|(j, _)| if c == 0 { j < 2 } else { j >= 2 }));
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let spec = SyntheticSpec::topics(3, 30, 15.0, 0.3, 200, 9).unwrap();
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn class_counts_are_balanced() {
        let spec = SyntheticSpec::topics(4, 40, 5.0, 0.5, 4000, 5).unwrap();
        let (_, labels) = generate_synthetic(&spec).unwrap();
        let mut counts = [0usize; 4];
        for &c in labels.assignments.values() {
            counts[c] += 1;
        }
        // binomial sd of each count
        let sd = (4000.0 * 0.25 * 0.75f64).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() < 5.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn rejects_unnormalized_alpha() {
        let spec = SyntheticSpec {
            alphas: vec![vec![0.5, 0.6]],
            lambdas: vec![1.0],
            n: 3,
            seed: 0,
        };
        assert!(generate_synthetic(&spec).is_err());
    }
}
