//! The frozen first layer seen as a kernel.
//!
//! A first layer of `m1` random features `z_j ~ N(0, I_d)` with activation
//! `sigma1` induces the random-feature kernel
//! `G^{m1}(x, x') = (1/m1) sum_j sigma1(z_j . x) sigma1(z_j . x')`, whose
//! infinite-width limit for ReLU is the order-1 arc-cosine kernel.
//!
//! Everything downstream of the training-set Gram matrix `G` lives here too:
//! its spectral pseudo-inverse, the square roots used to map the mean-field
//! dynamics onto `R^n`, the feature map `x -> X(x)` and the conditional
//! deviation `tau(x)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Order-1 arc-cosine kernel, `E_z[ReLU(z.x) ReLU(z.x')]` for `z ~ N(0, I_d)`:
/// `(|x||x'| / 2 pi) (sin t + (pi - t) cos t)` with `t` the angle between the
/// inputs. A zero input yields the limit value 0.
pub fn kernel_exact(x: &[f64], xp: &[f64]) -> f64 {
    let (nx, nxp) = (norm(x), norm(xp));
    if nx == 0.0 || nxp == 0.0 {
        log::warn!("arc-cosine kernel evaluated at a zero input; returning 0");
        return 0.0;
    }
    // t = 2 atan2(|u - v|, |u + v|) on unit vectors stays accurate near 0 and pi.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in x.iter().zip(xp) {
        let (u, v) = (a / nx, b / nxp);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    let (d, s) = (diff.sqrt(), sum.sqrt());
    let theta = 2.0 * d.atan2(s);
    // Half-angle forms: sin(t/2) = d/2 and cos(t/2) = s/2 since d^2 + s^2 = 4.
    let sin_t = 0.5 * d * s;
    let cos_t = 0.25 * (sum - diff);
    nx * nxp / (2.0 * PI) * (sin_t + (PI - theta) * cos_t)
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelMode {
    /// Closed-form arc-cosine kernel (ReLU first layer, standard Gaussian `z`).
    AnalyticRelu,
    /// Monte-Carlo random features; `features` is `m1 x d`, one `z_j` per row.
    MonteCarlo {
        features: DMatrix<f64>,
        sigma1: Activation,
    },
}

#[derive(Debug, Clone)]
pub struct KernelModel {
    pub mode: KernelMode,
    pub dim: usize,
    /// Largest diagonal value `G(x, x)` over the points registered with
    /// [`KernelModel::record_domain`]; a stand-in for the supremum over inputs.
    pub g_max: f64,
}

impl KernelModel {
    pub fn analytic(dim: usize) -> Self {
        Self {
            mode: KernelMode::AnalyticRelu,
            dim,
            g_max: f64::NAN,
        }
    }

    /// Draws `m1` features `z_j ~ N(0, I_d)` from a seeded stream.
    pub fn monte_carlo(dim: usize, m1: usize, sigma1: Activation, seed: u64) -> Result<Self> {
        if m1 == 0 {
            return Err(Error::Config("kernel.m1 must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = DMatrix::from_fn(m1, dim, |_, _| StandardNormal.sample(&mut rng));
        Ok(Self::from_features(features, sigma1))
    }

    pub fn from_features(features: DMatrix<f64>, sigma1: Activation) -> Self {
        let dim = features.ncols();
        Self {
            mode: KernelMode::MonteCarlo { features, sigma1 },
            dim,
            g_max: f64::NAN,
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.mode, KernelMode::AnalyticRelu)
    }

    pub fn m1(&self) -> Option<usize> {
        match &self.mode {
            KernelMode::AnalyticRelu => None,
            KernelMode::MonteCarlo { features, .. } => Some(features.nrows()),
        }
    }

    pub fn eval(&self, x: &[f64], xp: &[f64]) -> f64 {
        match &self.mode {
            KernelMode::AnalyticRelu => kernel_exact(x, xp),
            KernelMode::MonteCarlo { .. } => self.kernel_mc(x, xp),
        }
    }

    /// `(1/m1) sum_j sigma1(z_j . x) sigma1(z_j . x')`; 0 in analytic mode.
    pub fn kernel_mc(&self, x: &[f64], xp: &[f64]) -> f64 {
        let KernelMode::MonteCarlo { features, sigma1 } = &self.mode else {
            return 0.0;
        };
        let m1 = features.nrows();
        let mut acc = 0.0;
        for j in 0..m1 {
            let (mut u, mut v) = (0.0, 0.0);
            for c in 0..self.dim {
                let z = features[(j, c)];
                u += z * x[c];
                v += z * xp[c];
            }
            acc += sigma1.value(u) * sigma1.value(v);
        }
        acc / m1 as f64
    }

    /// First-layer outputs `sigma1(z_j . x_k)` as an `n x m1` matrix.
    /// `None` in analytic mode.
    pub fn feature_matrix(&self, points: &[Vec<f64>]) -> Option<DMatrix<f64>> {
        let KernelMode::MonteCarlo { features, sigma1 } = &self.mode else {
            return None;
        };
        let m1 = features.nrows();
        Some(DMatrix::from_fn(points.len(), m1, |k, j| {
            let u: f64 = (0..self.dim).map(|c| features[(j, c)] * points[k][c]).sum();
            sigma1.value(u)
        }))
    }

    /// Symmetrized Gram matrix over `points`.
    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let raw = match self.feature_matrix(points) {
            Some(phi) => {
                let m1 = phi.ncols() as f64;
                (&phi * phi.transpose()) / m1
            }
            None => DMatrix::from_fn(n, n, |k, l| kernel_exact(&points[k], &points[l])),
        };
        linalg::symmetrize(&raw)
    }

    /// Sets [`g_max`](Self::g_max) to the largest `G(x, x)` over `points`.
    pub fn record_domain<'a, I: IntoIterator<Item = &'a Vec<f64>>>(&mut self, points: I) {
        self.g_max = points
            .into_iter()
            .map(|x| self.eval(x, x))
            .fold(0.0, f64::max);
    }
}

/// Free-function form of [`KernelModel::gram`].
pub fn gram(km: &KernelModel, points: &[Vec<f64>]) -> DMatrix<f64> {
    km.gram(points)
}

/// Eigen-decomposition of a PSD Gram matrix with the pseudo-inverse machinery
/// built on the retained eigenspace.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub gram: DMatrix<f64>,
    /// Non-increasing; values below `rank_tolerance * lambda_max` are zeroed.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub rank_tolerance: f64,
    pub effective_rank: usize,
    /// Smallest eigenvalue before truncation.
    pub raw_lambda_min: f64,
    pinv: DMatrix<f64>,
    pinv_sqrt: DMatrix<f64>,
    sqrt: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.get(0).copied().unwrap_or(0.0)
    }

    /// Least eigenvalue after truncation (0 when rank deficient).
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.iter().next_back().copied().unwrap_or(0.0)
    }

    /// `min_k G_kk`.
    pub fn g_min(&self) -> f64 {
        self.gram
            .diagonal()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn pinv_sqrt(&self) -> &DMatrix<f64> {
        &self.pinv_sqrt
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    /// Orthogonal projector onto `Ran(G)`.
    pub fn range_projector(&self) -> DMatrix<f64> {
        let v = self.eigenvectors.columns(0, self.effective_rank);
        v * v.transpose()
    }

    /// `Proj_{Ran(G)} v`.
    pub fn project_range(&self, v: &DVector<f64>) -> DVector<f64> {
        let basis = self.eigenvectors.columns(0, self.effective_rank);
        let coeffs = basis.transpose() * v;
        basis * coeffs
    }

    /// `sum_i c_i^2 / lambda_i` over retained eigenpairs with `c = V^T g`, i.e.
    /// `g^T G^+ g` accumulated in the eigenbasis.
    pub fn pinv_quadratic_form(&self, g: &DVector<f64>) -> f64 {
        (0..self.effective_rank)
            .map(|i| {
                let c = self.eigenvectors.column(i).dot(g);
                c * c / self.eigenvalues[i]
            })
            .sum()
    }
}

/// Builds the spectral decomposition of a symmetric PSD matrix.
pub fn spectral(g: &DMatrix<f64>, rel_tol: f64) -> Result<SpectralDecomposition> {
    if g.nrows() != g.ncols() {
        return Err(Error::Contract(format!(
            "spectral decomposition needs a square matrix, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let gram = linalg::symmetrize(g);
    let (mut values, vectors) = linalg::sorted_eigen(&gram);
    let n = values.len();
    let lmax = values.get(0).copied().unwrap_or(0.0).max(0.0);
    let cutoff = rel_tol * lmax;
    let raw_lambda_min = values.iter().next_back().copied().unwrap_or(0.0);
    if raw_lambda_min < -cutoff {
        return Err(Error::NotPsd {
            eigenvalue: raw_lambda_min,
            tolerance: cutoff,
        });
    }
    let mut rank = 0;
    for i in 0..n {
        if values[i] <= cutoff || values[i] <= 0.0 {
            values[i] = 0.0;
        } else {
            rank += 1;
        }
    }
    let build = |f: &dyn Fn(f64) -> f64| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..rank {
            let v = vectors.column(i);
            m += f(values[i]) * (v * v.transpose());
        }
        linalg::symmetrize(&m)
    };
    let pinv = build(&|l| 1.0 / l);
    let pinv_sqrt = build(&|l| 1.0 / l.sqrt());
    let sqrt = build(&|l| l.sqrt());
    Ok(SpectralDecomposition {
        gram,
        eigenvalues: values,
        eigenvectors: vectors,
        rank_tolerance: rel_tol,
        effective_rank: rank,
        raw_lambda_min,
        pinv,
        pinv_sqrt,
        sqrt,
    })
}

/// Training inputs with the spectral data of their Gram matrix; maps any
/// input into the `n`-dimensional coordinates of the mean-field reduction.
#[derive(Debug, Clone)]
pub struct FeatureMapContext {
    pub kernel: KernelModel,
    pub train_x: Vec<Vec<f64>>,
    pub spectral: SpectralDecomposition,
    /// Row `k` is `x~_k = (G^{1/2})_{k,:}`.
    pub x_tilde: DMatrix<f64>,
}

impl FeatureMapContext {
    pub fn new(kernel: KernelModel, train_x: Vec<Vec<f64>>, rel_tol: f64) -> Result<Self> {
        if train_x.is_empty() {
            return Err(Error::Contract(
                "feature map needs at least one training point".into(),
            ));
        }
        let g = kernel.gram(&train_x);
        let spectral = spectral(&g, rel_tol)?;
        let x_tilde = spectral.sqrt().clone();
        Ok(Self {
            kernel,
            train_x,
            spectral,
            x_tilde,
        })
    }

    pub fn n(&self) -> usize {
        self.train_x.len()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.spectral.gram
    }

    /// `(G(x_1, x), ..., G(x_n, x))`.
    pub fn kernel_column(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.train_x.iter().map(|xk| self.kernel.eval(xk, x)),
        )
    }

    /// `X(x) = sum_k G(x_k, x) ((G^+)^{1/2})_{k,:}`.
    pub fn feature_map(&self, x: &[f64]) -> DVector<f64> {
        // (G^+)^{1/2} is symmetric, so the row combination is a matrix-vector product.
        self.spectral.pinv_sqrt() * self.kernel_column(x)
    }

    /// `tau(x) = sqrt(G(x,x) - g^T G^+ g)`, the standard deviation of a
    /// Gaussian-process path at `x` conditioned on its training-set values.
    pub fn tau(&self, x: &[f64]) -> Result<f64> {
        let gxx = self.kernel.eval(x, x);
        let g = self.kernel_column(x);
        let radicand = gxx - self.spectral.pinv_quadratic_form(&g);
        let tolerance = 1e-6 * gxx.abs();
        if radicand < -tolerance {
            return Err(Error::Inconsistent {
                radicand,
                tolerance,
            });
        }
        Ok(radicand.max(0.0).sqrt())
    }
}
