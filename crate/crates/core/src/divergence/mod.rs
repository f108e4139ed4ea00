//! Bregman divergences d_φ(x, y) = φ(x) − φ(y) − (x − y)ᵀ∇φ(y).
//!
//! A [`DivergenceSpec`] is the serializable description (kind plus
//! parameters); [`Divergence`] is the validated, ready-to-evaluate handle
//! obtained from it through a [`GeneratorRegistry`]. The first argument of
//! every two-point function is the datapoint and the second the kernel
//! center.

pub mod generators;
mod registry;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{for_each_union, SparsePoint};
pub use generators::Generator;
pub use registry::{GeneratorFactory, GeneratorRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceKind {
    SqEuclidean,
    Mahalanobis,
    Gid,
    Kl,
    ItakuraSaito,
    Logistic,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 6] = [
        DivergenceKind::SqEuclidean,
        DivergenceKind::Mahalanobis,
        DivergenceKind::Gid,
        DivergenceKind::Kl,
        DivergenceKind::ItakuraSaito,
        DivergenceKind::Logistic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceKind::SqEuclidean => "sq-euclidean",
            DivergenceKind::Mahalanobis => "mahalanobis",
            DivergenceKind::Gid => "gid",
            DivergenceKind::Kl => "kl",
            DivergenceKind::ItakuraSaito => "itakura-saito",
            DivergenceKind::Logistic => "logistic",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DivergenceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                what: "divergence",
                name: s.to_string(),
            })
    }
}

/// Parameters of a divergence.
///
/// `sigma` is only read by `sq-euclidean`, `covariance_diag` only by
/// `mahalanobis`; `epsilon` is the count-smoothing offset the data was (or
/// will be) prepared with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    pub sigma: f64,
    pub covariance_diag: Vec<f64>,
    pub epsilon: f64,
    pub dim: usize,
}

impl DivergenceSpec {
    /// Spec with unit bandwidth, identity covariance and no smoothing.
    pub fn new(kind: DivergenceKind, dim: usize) -> Self {
        DivergenceSpec {
            kind,
            sigma: 1.0,
            covariance_diag: vec![1.0; dim],
            epsilon: 0.0,
            dim,
        }
    }

    pub fn sq_euclidean(dim: usize, sigma: f64) -> Self {
        DivergenceSpec {
            sigma,
            ..Self::new(DivergenceKind::SqEuclidean, dim)
        }
    }

    pub fn gid(dim: usize, epsilon: f64) -> Self {
        DivergenceSpec {
            epsilon,
            ..Self::new(DivergenceKind::Gid, dim)
        }
    }

    pub fn mahalanobis(covariance_diag: Vec<f64>) -> Self {
        DivergenceSpec {
            dim: covariance_diag.len(),
            covariance_diag,
            ..Self::new(DivergenceKind::Mahalanobis, 0)
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "epsilon must be a nonnegative real, got {}",
                self.epsilon
            )));
        }
        match self.kind {
            DivergenceKind::SqEuclidean if !(self.sigma > 0.0 && self.sigma.is_finite()) => Err(
                Error::InvalidSpec(format!("sigma must be positive, got {}", self.sigma)),
            ),
            DivergenceKind::Mahalanobis => {
                if self.covariance_diag.len() != self.dim {
                    return Err(Error::InvalidSpec(format!(
                        "covariance diagonal has {} entries for dimension {}",
                        self.covariance_diag.len(),
                        self.dim
                    )));
                }
                if let Some(v) = self
                    .covariance_diag
                    .iter()
                    .find(|v| !(**v > 0.0 && v.is_finite()))
                {
                    return Err(Error::InvalidSpec(format!(
                        "covariance entries must be positive, got {v}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Divergence> {
        Divergence::with_registry(self, &GeneratorRegistry::builtin())
    }
}

/// Validated divergence handle. Cheap to clone.
#[derive(Clone)]
pub struct Divergence {
    spec: DivergenceSpec,
    generator: Arc<dyn Generator>,
}

impl fmt::Debug for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Divergence").field("spec", &self.spec).finish()
    }
}

impl Divergence {
    pub fn with_registry(spec: &DivergenceSpec, registry: &GeneratorRegistry) -> Result<Self> {
        spec.validate()?;
        Ok(Divergence {
            spec: spec.clone(),
            generator: Arc::from(registry.create(spec)?),
        })
    }

    pub fn spec(&self) -> &DivergenceSpec {
        &self.spec
    }

    pub fn kind(&self) -> DivergenceKind {
        self.spec.kind
    }

    pub fn name(&self) -> &'static str {
        self.generator.name()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn generator(&self) -> &dyn Generator {
        self.generator.as_ref()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        self.check_dim(x)?;
        self.generator.check_point(x)
    }

    pub fn phi(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(x.iter().enumerate().map(|(j, &v)| self.generator.phi(j, v)).sum())
    }

    pub fn grad_phi(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(x.iter().enumerate().map(|(j, &v)| self.generator.grad(j, v)).collect())
    }

    pub fn grad_phi_inv(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        if let Some(index) = u.iter().position(|&v| !self.generator.grad_range_contains(v)) {
            return Err(Error::GradientRange {
                kind: self.name(),
                index,
                value: u[index],
            });
        }
        Ok(u.iter().enumerate().map(|(j, &v)| self.generator.grad_inv(j, v)).collect())
    }

    pub fn divergence(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.divergence_unchecked(x, y))
    }

    /// Dense evaluation without domain checks.
    pub fn divergence_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(j, (&a, &b))| self.generator.divergence(j, a, b))
            .sum()
    }

    /// log p0(x) of the paired exponential family.
    pub fn log_base_measure(&self, x: &[f64]) -> f64 {
        self.generator.log_base_constant(x.len())
            + x.iter()
                .enumerate()
                .map(|(j, &v)| self.generator.log_base_measure(j, v))
                .sum::<f64>()
    }

    /// d_φ between two points sharing a fill value, touching only the union
    /// of their stored coordinates. Inputs are assumed in-domain.
    pub fn point_divergence(&self, x: &SparsePoint, y: &SparsePoint) -> f64 {
        debug_assert_eq!(x.base, y.base);
        let g = self.generator.as_ref();
        let mut acc = 0.0;
        for_each_union(x, y, |j, a, b| acc += g.divergence(j, a, b));
        acc
    }
}

pub fn phi(spec: &DivergenceSpec, x: &[f64]) -> Result<f64> {
    spec.build()?.phi(x)
}

pub fn grad_phi(spec: &DivergenceSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.build()?.grad_phi(x)
}

pub fn grad_phi_inv(spec: &DivergenceSpec, u: &[f64]) -> Result<Vec<f64>> {
    spec.build()?.grad_phi_inv(u)
}

pub fn bregman_divergence(spec: &DivergenceSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.build()?.divergence(x, y)
}
