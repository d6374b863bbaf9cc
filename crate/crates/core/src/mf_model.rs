//! Mean-field limit simulated through its exact `n`-dimensional reduction.
//!
//! Each neuron is a particle `(a_i, lambda_i, b_i)` with `lambda_i` in `R^n`;
//! its pre-activation at training point `x_k` is `lambda_i . x~_k + b_i` where
//! `x~_k` is row `k` of `G^{1/2}`. For `alpha > 1/2` all `lambda_i` start at
//! zero; for `alpha = 1/2` they start standard normal, which reproduces the
//! Gaussian-process law of the initial pre-activations on the training set.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::activations::{Activation, GaussQuadrature};
use crate::error::{Error, Result};
use crate::finite_model::InitSpec;
use crate::kernel::FeatureMapContext;
use crate::linalg::sorted_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `alpha = 1/2`.
    Half,
    /// `alpha > 1/2`.
    GreaterThanHalf,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Half => "half",
            Regime::GreaterThanHalf => "gt_half",
        }
    }

    /// Regime implied by the scaling exponent, if it has a mean-field limit here.
    pub fn for_alpha(alpha: f64) -> Option<Regime> {
        if alpha == 0.5 {
            Some(Regime::Half)
        } else if alpha > 0.5 {
            Some(Regime::GreaterThanHalf)
        } else {
            None
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half" => Ok(Regime::Half),
            "gt_half" => Ok(Regime::GreaterThanHalf),
            other => Err(Error::Config(format!(
                "mf.regime must be \"half\" or \"gt_half\", got {other:?}"
            ))),
        }
    }
}

/// Particle count used when none is configured. The `alpha > 1/2` ensemble
/// starting from `lambda = 0` with `a` uniform on two atoms has exactly two
/// distinct trajectories, so two particles represent it without sampling error.
pub fn default_particle_count(regime: Regime) -> usize {
    match regime {
        Regime::Half => 2000,
        Regime::GreaterThanHalf => 2,
    }
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub a: DVector<f64>,
    /// `M x n`.
    pub lambda: DMatrix<f64>,
    pub lambda0: DMatrix<f64>,
    pub b: DVector<f64>,
    pub regime: Regime,
    pub ctx: Arc<FeatureMapContext>,
    pub beta_a: f64,
    pub beta_b: f64,
    pub sigma2: Activation,
}

impl ParticleEnsemble {
    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn n(&self) -> usize {
        self.lambda.ncols()
    }

    /// Reorders particles; `perm[i]` is the old index of new particle `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.m();
        let n = self.n();
        let mut out = self.clone();
        for (dst, &src) in perm.iter().enumerate().take(m) {
            out.a[dst] = self.a[src];
            out.b[dst] = self.b[src];
            for k in 0..n {
                out.lambda[(dst, k)] = self.lambda[(src, k)];
                out.lambda0[(dst, k)] = self.lambda0[(src, k)];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MfShape {
    pub m: usize,
    pub regime: Regime,
    pub beta_a: f64,
    pub beta_b: f64,
    pub sigma2: Activation,
}

/// Samples an ensemble. With the `alpha > 1/2` regime and `m` even, the
/// output weights are balanced: half `+a_scale`, half `-a_scale`.
pub fn mf_init(
    ctx: Arc<FeatureMapContext>,
    shape: MfShape,
    seed: u64,
    spec: InitSpec,
) -> Result<ParticleEnsemble> {
    if shape.m == 0 {
        return Err(Error::Config("mf.M must be at least 1".into()));
    }
    if shape.beta_a < 0.0 || shape.beta_b < 0.0 {
        return Err(Error::Config(
            "learning rates beta_a, beta_b must be >= 0".into(),
        ));
    }
    let n = ctx.n();
    let m = shape.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DVector::zeros(m);
    let mut lambda = DMatrix::zeros(m, n);
    match shape.regime {
        Regime::GreaterThanHalf if m.is_multiple_of(2) => {
            for i in 0..m {
                a[i] = if i % 2 == 0 {
                    spec.a_scale
                } else {
                    -spec.a_scale
                };
            }
        }
        regime => {
            for i in 0..m {
                a[i] = if rng.random::<bool>() {
                    spec.a_scale
                } else {
                    -spec.a_scale
                };
                if regime == Regime::Half {
                    for k in 0..n {
                        lambda[(i, k)] = StandardNormal.sample(&mut rng);
                    }
                }
            }
        }
    }
    Ok(ParticleEnsemble {
        a,
        lambda0: lambda.clone(),
        lambda,
        b: DVector::zeros(m),
        regime: shape.regime,
        ctx,
        beta_a: shape.beta_a,
        beta_b: shape.beta_b,
        sigma2: shape.sigma2,
    })
}

#[derive(Debug, Clone)]
pub struct MfState {
    pub ensemble: ParticleEnsemble,
    pub train_y: DVector<f64>,
    pub dt: f64,
    pub step: usize,
    /// Pre-activations `lambda_i . x~_k + b_i`, `M x n`.
    pub preact: DMatrix<f64>,
    /// `g_t(x~_k) = (1/M) sum_i a_i sigma2(lambda_i . x~_k + b_i)`.
    pub g: DVector<f64>,
    pub zeta: DVector<f64>,
    pub loss: f64,
}

impl MfState {
    pub fn new(ensemble: ParticleEnsemble, train_y: &[f64], dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("train.dt must be > 0, got {dt}")));
        }
        let n = ensemble.n();
        if train_y.len() != n {
            return Err(Error::Contract(format!(
                "{} labels for {} training points",
                train_y.len(),
                n
            )));
        }
        let m = ensemble.m();
        let mut st = Self {
            ensemble,
            train_y: DVector::from_column_slice(train_y),
            dt,
            step: 0,
            preact: DMatrix::zeros(m, n),
            g: DVector::zeros(n),
            zeta: DVector::zeros(n),
            loss: 0.0,
        };
        st.refresh();
        Ok(st)
    }

    pub fn n(&self) -> usize {
        self.ensemble.n()
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn x_tilde(&self) -> &DMatrix<f64> {
        &self.ensemble.ctx.x_tilde
    }

    /// Recomputes pre-activations, `g_t`, residuals and loss.
    pub fn refresh(&mut self) {
        let e = &self.ensemble;
        let mut p = &e.lambda * self.x_tilde().transpose();
        for mut col in p.column_iter_mut() {
            col += &e.b;
        }
        self.preact = p;
        self.g = g_from_preact(e, &self.preact);
        self.zeta = &self.g - &self.train_y;
        self.loss = self.zeta.norm_squared() / (2.0 * self.n() as f64);
    }

    /// One simultaneous Euler step of the particle flow.
    pub fn mf_euler_step(&mut self) -> Result<()> {
        let n = self.n();
        let nf = n as f64;
        let dt = self.dt;
        let e = &self.ensemble;
        let m = e.m();
        let sigma = e.sigma2;
        let mut da = DVector::zeros(m);
        let mut db = DVector::zeros(m);
        let mut r = DMatrix::zeros(m, n);
        for i in 0..m {
            let mut sa = 0.0;
            let mut sb = 0.0;
            for k in 0..n {
                let u = self.preact[(i, k)];
                let z = self.zeta[k];
                sa += z * sigma.value(u);
                let rik = z * sigma.derivative(u);
                r[(i, k)] = rik;
                sb += rik;
            }
            da[i] = -dt * e.beta_a * sa / nf;
            db[i] = -dt * e.beta_b * e.a[i] * sb / nf;
        }
        // d lambda_i = -dt (a_i / n) sum_k R_ik x~_k
        let mut dl = &r * self.x_tilde();
        for (i, mut row) in dl.row_iter_mut().enumerate() {
            row *= -dt * e.a[i] / nf;
        }
        let e = &mut self.ensemble;
        e.a += da;
        e.b += db;
        e.lambda += dl;
        self.step += 1;
        self.refresh();
        let e = &self.ensemble;
        let finite = self.loss.is_finite()
            && e.lambda.iter().all(|v| v.is_finite())
            && e.a.iter().all(|v| v.is_finite())
            && e.b.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Divergence {
                model: "mf_model",
                step: self.step,
                max_residual: self.zeta.amax(),
            });
        }
        Ok(())
    }

    /// Mean and maximum over particles of `|Proj_Ran(G)(lambda_i - lambda0_i)|`,
    /// the RKHS-norm displacement of each neuron's feature function.
    pub fn displacement_norms(&self) -> (f64, f64) {
        let e = &self.ensemble;
        let spec = &e.ctx.spectral;
        let basis = spec.eigenvectors.columns(0, spec.effective_rank);
        let delta = &e.lambda - &e.lambda0;
        let coeffs = &delta * basis;
        let mut norms: Vec<f64> = coeffs.row_iter().map(|r| r.norm()).collect();
        let sup = norms.iter().copied().fold(0.0, f64::max);
        let mean = sorted_sum(&mut norms) / e.m() as f64;
        (mean, sup)
    }

    /// Network output at an arbitrary input.
    pub fn mf_output(&self, x: &[f64], quad: &GaussQuadrature) -> Result<f64> {
        let e = &self.ensemble;
        let feat = e.ctx.feature_map(x);
        let u = &e.lambda * feat + &e.b;
        let sigma = e.sigma2;
        let mut terms: Vec<f64> = match e.regime {
            Regime::GreaterThanHalf => (0..e.m()).map(|i| e.a[i] * sigma.value(u[i])).collect(),
            Regime::Half => {
                let tau = e.ctx.tau(x)?;
                (0..e.m())
                    .map(|i| {
                        let ui = u[i];
                        e.a[i] * quad.expectation_unchecked(|z| sigma.value(tau * z + ui))
                    })
                    .collect()
            }
        };
        Ok(sorted_sum(&mut terms) / e.m() as f64)
    }

    pub fn mf_output_batch(&self, xs: &[Vec<f64>], quad: &GaussQuadrature) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.mf_output(x, quad)).collect()
    }
}

fn g_from_preact(e: &ParticleEnsemble, p: &DMatrix<f64>) -> DVector<f64> {
    let m = e.m();
    let mut buf = vec![0.0; m];
    DVector::from_iterator(
        p.ncols(),
        (0..p.ncols()).map(|k| {
            for i in 0..m {
                buf[i] = e.a[i] * e.sigma2.value(p[(i, k)]);
            }
            sorted_sum(&mut buf) / m as f64
        }),
    )
}

/// Runs `ceil(T/dt)` steps, calling `on_log` at step 0, every `log_every`
/// steps and at the last step.
pub fn train_with<F>(
    st: &mut MfState,
    total_time: f64,
    log_every: usize,
    mut on_log: F,
) -> Result<()>
where
    F: FnMut(&MfState) -> Result<()>,
{
    let steps = crate::finite_model::step_count(total_time, st.dt);
    let every = log_every.max(1);
    on_log(st)?;
    for s in 1..=steps {
        st.mf_euler_step()?;
        if s % every == 0 || s == steps {
            on_log(st)?;
        }
    }
    Ok(())
}
