//! Activation functions and Gaussian-expectation quadrature.
//!
//! The second-layer activation enters the training dynamics through its value
//! and derivative; its bound and Lipschitz constants feed the a-posteriori
//! generalization bound. The quadrature evaluates `E[g(Z)]` for `Z ~ N(0, 1)`,
//! which the `alpha = 1/2` mean-field output needs off the training set.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn value(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Tanh => u.tanh(),
        }
    }

    /// Derivative; ReLU uses 0 at the kink so dead units stay inert.
    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
        }
    }

    /// `sup |sigma|`, infinite for ReLU.
    pub fn bound(self) -> f64 {
        match self {
            Activation::Relu => f64::INFINITY,
            Activation::Tanh => 1.0,
        }
    }

    /// `sup |sigma'|`.
    pub fn lipschitz(self) -> f64 {
        1.0
    }

    /// Lipschitz constant of `sigma'`; ReLU's derivative is discontinuous.
    pub fn derivative_lipschitz(self) -> f64 {
        match self {
            Activation::Relu => f64::INFINITY,
            // max |d/du (1 - tanh^2 u)| = 4 / (3 sqrt 3) < 1; 1 is the constant reported to bound evaluators.
            Activation::Tanh => 1.0,
        }
    }

    /// Interval on which `|sigma'|` is bounded below, and that lower bound.
    ///
    /// For tanh the interval `(-1, 1)` is a reporting convention; any open
    /// interval works with a correspondingly smaller bound.
    pub fn derivative_floor(self) -> (Interval, f64) {
        match self {
            Activation::Relu => (Interval::new(0.0, f64::INFINITY), 1.0),
            Activation::Tanh => {
                let t = 1f64.tanh();
                (Interval::new(-1.0, 1.0), 1.0 - t * t)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected \"relu\" or \"tanh\")"
            ))),
        }
    }
}

/// Open interval `(lo, hi)`; empty when `lo >= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn empty() -> Self {
        Self { lo: 0.0, hi: 0.0 }
    }

    #[inline]
    pub fn contains(&self, u: f64) -> bool {
        u > self.lo && u < self.hi
    }

    pub fn is_empty(&self) -> bool {
        self.lo.partial_cmp(&self.hi) != Some(std::cmp::Ordering::Less)
    }
}

pub const DEFAULT_QUAD_ORDER: usize = 32;

/// Gauss-Hermite rule for expectations against the standard normal
/// (probabilists' weight `exp(-z^2/2) / sqrt(2 pi)`).
#[derive(Debug, Clone)]
pub struct GaussQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussQuadrature {
    /// Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix of the
    /// probabilists' Hermite recurrence, weights the squared first components
    /// of the normalized eigenvectors.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("quadrature order must be positive".into()));
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let off = (k as f64).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Symmetrize: the rule is exactly symmetric in exact arithmetic.
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let z = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-z, w);
            pairs[j] = (z, w);
        }
        if order % 2 == 1 {
            pairs[order / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let (nodes, weights) = pairs.into_iter().map(|(z, w)| (z, w / total)).unzip();
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i w_i g(z_i)`, an approximation of `E[g(Z)]`, `Z ~ N(0, 1)`.
    pub fn expectation<F: FnMut(f64) -> f64>(&self, mut g: F) -> Result<f64> {
        let mut acc = 0.0;
        for (node, (&z, &w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let value = g(z);
            if !value.is_finite() {
                return Err(Error::NumericalDomain { node, z, value });
            }
            acc += w * value;
        }
        Ok(acc)
    }

    /// Like [`expectation`](Self::expectation) but skips the finiteness check;
    /// for bounded integrands in inner loops.
    #[inline]
    pub fn expectation_unchecked<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * g(z))
            .sum()
    }
}

/// Free-function form of [`GaussQuadrature::expectation`].
pub fn gaussian_expectation<F: FnMut(f64) -> f64>(q: &GaussQuadrature, g: F) -> Result<f64> {
    q.expectation(g)
}
