//! Separable convex generators.
//!
//! Every divergence in this crate is a sum of one-dimensional Bregman
//! divergences, so a generator only describes a single coordinate. Vector
//! operations, domain checks and the sparse fast paths are built on top of
//! this trait by [`super::Divergence`].

use std::f64::consts::PI;
use std::fmt;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Coordinatewise description of a strictly convex generator φ.
pub trait Generator: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn phi(&self, j: usize, x: f64) -> f64;

    fn grad(&self, j: usize, x: f64) -> f64;

    fn grad_inv(&self, j: usize, u: f64) -> f64;

    /// One-coordinate Bregman divergence. Generators override this with an
    /// algebraically simplified form when one exists.
    fn divergence(&self, j: usize, x: f64, y: f64) -> f64 {
        self.phi(j, x) - self.phi(j, y) - (x - y) * self.grad(j, y)
    }

    fn contains(&self, x: f64) -> bool;

    fn grad_range_contains(&self, u: f64) -> bool {
        u.is_finite()
    }

    /// Per-coordinate part of log p0(x) for the exponential family paired
    /// with this generator.
    fn log_base_measure(&self, _j: usize, _x: f64) -> f64 {
        0.0
    }

    /// Coordinate-independent part of log p0(x).
    fn log_base_constant(&self, _dim: usize) -> f64 {
        0.0
    }

    /// Whole-vector domain check; the default checks each coordinate.
    fn check_point(&self, x: &[f64]) -> Result<()> {
        match x.iter().position(|&v| !self.contains(v)) {
            Some(index) => Err(Error::Domain {
                kind: self.name(),
                index,
                value: x[index],
            }),
            None => Ok(()),
        }
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// ‖x‖²/2σ².
#[derive(Debug, Clone)]
pub struct SqEuclidean {
    sigma: f64,
    scale: f64,
}

impl SqEuclidean {
    pub fn new(sigma: f64) -> Self {
        SqEuclidean {
            sigma,
            scale: 1.0 / (2.0 * sigma * sigma),
        }
    }
}

impl Generator for SqEuclidean {
    fn name(&self) -> &'static str {
        "sq-euclidean"
    }
    fn phi(&self, _j: usize, x: f64) -> f64 {
        self.scale * x * x
    }
    fn grad(&self, _j: usize, x: f64) -> f64 {
        2.0 * self.scale * x
    }
    fn grad_inv(&self, _j: usize, u: f64) -> f64 {
        u * self.sigma * self.sigma
    }
    fn divergence(&self, _j: usize, x: f64, y: f64) -> f64 {
        let d = x - y;
        self.scale * d * d
    }
    fn contains(&self, x: f64) -> bool {
        x.is_finite()
    }
    fn log_base_measure(&self, j: usize, x: f64) -> f64 {
        -self.phi(j, x)
    }
    fn log_base_constant(&self, dim: usize) -> f64 {
        -0.5 * dim as f64 * (2.0 * PI * self.sigma * self.sigma).ln()
    }
}

/// xᵀΣ⁻¹x with diagonal Σ.
#[derive(Debug, Clone)]
pub struct Mahalanobis {
    inv_var: Vec<f64>,
}

impl Mahalanobis {
    pub fn new(covariance_diag: &[f64]) -> Self {
        Mahalanobis {
            inv_var: covariance_diag.iter().map(|v| 1.0 / v).collect(),
        }
    }
}

impl Generator for Mahalanobis {
    fn name(&self) -> &'static str {
        "mahalanobis"
    }
    fn phi(&self, j: usize, x: f64) -> f64 {
        self.inv_var[j] * x * x
    }
    fn grad(&self, j: usize, x: f64) -> f64 {
        2.0 * self.inv_var[j] * x
    }
    fn grad_inv(&self, j: usize, u: f64) -> f64 {
        u / (2.0 * self.inv_var[j])
    }
    fn divergence(&self, j: usize, x: f64, y: f64) -> f64 {
        let d = x - y;
        self.inv_var[j] * d * d
    }
    fn contains(&self, x: f64) -> bool {
        x.is_finite()
    }
    // exp(-d(x, mu) + phi(x)) p0(x) is the Gaussian with covariance Σ/2.
    fn log_base_measure(&self, j: usize, x: f64) -> f64 {
        -self.phi(j, x)
    }
    fn log_base_constant(&self, _dim: usize) -> f64 {
        -0.5 * self.inv_var.iter().map(|w| (PI / w).ln()).sum::<f64>()
    }
}

/// Generalized I-divergence, φ(x) = Σ x log x − x, paired with independent
/// Poisson counts.
#[derive(Debug, Clone, Default)]
pub struct GeneralizedI;

impl Generator for GeneralizedI {
    fn name(&self) -> &'static str {
        "gid"
    }
    fn phi(&self, _j: usize, x: f64) -> f64 {
        xlogx(x) - x
    }
    fn grad(&self, _j: usize, x: f64) -> f64 {
        x.ln()
    }
    fn grad_inv(&self, _j: usize, u: f64) -> f64 {
        u.exp()
    }
    fn divergence(&self, _j: usize, x: f64, y: f64) -> f64 {
        xlogx(x) - x * y.ln() - x + y
    }
    fn contains(&self, x: f64) -> bool {
        x > 0.0 && x.is_finite()
    }
    fn log_base_measure(&self, _j: usize, x: f64) -> f64 {
        -ln_gamma(x + 1.0)
    }
}

/// Relative entropy on the open simplex, φ(x) = Σ x log x.
#[derive(Debug, Clone, Default)]
pub struct SimplexKl;

/// Tolerance on |Σx − 1| for simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-9;

impl Generator for SimplexKl {
    fn name(&self) -> &'static str {
        "kl"
    }
    fn phi(&self, _j: usize, x: f64) -> f64 {
        xlogx(x)
    }
    fn grad(&self, _j: usize, x: f64) -> f64 {
        x.ln() + 1.0
    }
    fn grad_inv(&self, _j: usize, u: f64) -> f64 {
        (u - 1.0).exp()
    }
    fn divergence(&self, _j: usize, x: f64, y: f64) -> f64 {
        xlogx(x) - x * y.ln() - x + y
    }
    fn contains(&self, x: f64) -> bool {
        x > 0.0 && x.is_finite()
    }
    fn check_point(&self, x: &[f64]) -> Result<()> {
        if let Some(index) = x.iter().position(|&v| !self.contains(v)) {
            return Err(Error::Domain {
                kind: self.name(),
                index,
                value: x[index],
            });
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotOnSimplex {
                kind: self.name(),
                sum,
            });
        }
        Ok(())
    }
}

/// φ(x) = Σ −log x − 1, paired with exponential variables.
#[derive(Debug, Clone, Default)]
pub struct ItakuraSaito;

impl Generator for ItakuraSaito {
    fn name(&self) -> &'static str {
        "itakura-saito"
    }
    fn phi(&self, _j: usize, x: f64) -> f64 {
        -x.ln() - 1.0
    }
    fn grad(&self, _j: usize, x: f64) -> f64 {
        -1.0 / x
    }
    fn grad_inv(&self, _j: usize, u: f64) -> f64 {
        -1.0 / u
    }
    fn divergence(&self, _j: usize, x: f64, y: f64) -> f64 {
        let r = x / y;
        r - r.ln() - 1.0
    }
    fn contains(&self, x: f64) -> bool {
        x > 0.0 && x.is_finite()
    }
    fn grad_range_contains(&self, u: f64) -> bool {
        u < 0.0 && u.is_finite()
    }
}

/// φ(x) = Σ x log x + (1 − x) log(1 − x), paired with Bernoulli variables.
#[derive(Debug, Clone, Default)]
pub struct Logistic;

impl Generator for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }
    fn phi(&self, _j: usize, x: f64) -> f64 {
        xlogx(x) + xlogx(1.0 - x)
    }
    fn grad(&self, _j: usize, x: f64) -> f64 {
        (x / (1.0 - x)).ln()
    }
    fn grad_inv(&self, _j: usize, u: f64) -> f64 {
        1.0 / (1.0 + (-u).exp())
    }
    fn divergence(&self, _j: usize, x: f64, y: f64) -> f64 {
        xlogx(x) - x * y.ln() + xlogx(1.0 - x) - (1.0 - x) * (1.0 - y).ln()
    }
    fn contains(&self, x: f64) -> bool {
        x > 0.0 && x < 1.0
    }
}
