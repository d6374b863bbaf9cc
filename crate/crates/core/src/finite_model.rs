//! Finite-width network with a frozen random first layer, trained by explicit
//! Euler steps of gradient flow.
//!
//! The output is
//! `f(x) = c_out * sum_i a_i sigma2(b_i + c_in * sum_j W_ij sigma1(z_j . x))`.
//! With the mean-field parameterization `c_out = 1/m2` and `c_in = m1^-alpha`.
//! The NTK contrast uses `c_out = m2^-1/2` and `c_in = m1^-1/2`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::kernel::KernelModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Parameterization {
    /// `c_out = 1/m2`, `c_in = m1^-alpha`, learning rates rescaled by `m2`
    /// and `m2 * m1^(2 alpha - 1)`.
    MeanField { alpha: f64 },
    /// `c_out = m2^-1/2`, `c_in = m1^-1/2`, unscaled learning rates.
    Ntk,
}

impl Parameterization {
    /// `alpha = 0` selects the NTK scaling; any positive value the mean-field one.
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!(
                "model.alpha must be >= 0, got {alpha}"
            )));
        }
        Ok(if alpha == 0.0 {
            Self::Ntk
        } else {
            Self::MeanField { alpha }
        })
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Self::MeanField { alpha } => *alpha,
            Self::Ntk => 0.0,
        }
    }
}

/// Sampling laws for the initial parameters. `a` is uniform on
/// `{-a_scale, +a_scale}`, `W` and `z` are standard normal, `b = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub a_scale: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self { a_scale: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteNet {
    pub m1: usize,
    pub m2: usize,
    pub param: Parameterization,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    /// `m2 x m1`.
    pub w: DMatrix<f64>,
    /// Frozen first-layer weights, `m1 x d`.
    pub z: DMatrix<f64>,
    pub beta_a: f64,
    pub beta_b: f64,
    pub sigma1: Activation,
    pub sigma2: Activation,
}

/// Exact partial derivatives of the loss `(1/2n) sum_k zeta_k^2`.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub a: DVector<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct NetShape {
    pub m1: usize,
    pub m2: usize,
    pub d: usize,
    pub alpha: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub sigma1: Activation,
    pub sigma2: Activation,
}

/// Draws a network from a seeded stream: `z` first, then `W`, then `a`.
pub fn init(shape: NetShape, seed: u64, spec: InitSpec) -> Result<FiniteNet> {
    let param = Parameterization::from_alpha(shape.alpha)?;
    if shape.m1 == 0 || shape.m2 == 0 {
        return Err(Error::Config(
            "model.m1 and model.m2 must be at least 1".into(),
        ));
    }
    if shape.beta_a < 0.0 || shape.beta_b < 0.0 {
        return Err(Error::Config(
            "learning rates beta_a, beta_b must be >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(shape.m1, shape.d, |_, _| StandardNormal.sample(&mut rng));
    let w = DMatrix::from_fn(shape.m2, shape.m1, |_, _| StandardNormal.sample(&mut rng));
    let a = DVector::from_fn(shape.m2, |_, _| {
        if rng.random::<bool>() {
            spec.a_scale
        } else {
            -spec.a_scale
        }
    });
    Ok(FiniteNet {
        m1: shape.m1,
        m2: shape.m2,
        param,
        a,
        b: DVector::zeros(shape.m2),
        w,
        z,
        beta_a: shape.beta_a,
        beta_b: shape.beta_b,
        sigma1: shape.sigma1,
        sigma2: shape.sigma2,
    })
}

impl FiniteNet {
    pub fn d(&self) -> usize {
        self.z.ncols()
    }

    pub fn c_out(&self) -> f64 {
        match self.param {
            Parameterization::MeanField { .. } => 1.0 / self.m2 as f64,
            Parameterization::Ntk => 1.0 / (self.m2 as f64).sqrt(),
        }
    }

    pub fn c_in(&self) -> f64 {
        match self.param {
            Parameterization::MeanField { alpha } => (self.m1 as f64).powf(-alpha),
            Parameterization::Ntk => 1.0 / (self.m1 as f64).sqrt(),
        }
    }

    /// Learning-rate multipliers `(eta_a, eta_W, eta_b)` turning gradients into
    /// Euler directions.
    pub fn rates(&self) -> (f64, f64, f64) {
        match self.param {
            Parameterization::MeanField { alpha } => {
                let m2 = self.m2 as f64;
                let m1 = self.m1 as f64;
                (
                    self.beta_a * m2,
                    m2 * m1.powf(2.0 * alpha - 1.0),
                    self.beta_b * m2,
                )
            }
            Parameterization::Ntk => (self.beta_a, 1.0, self.beta_b),
        }
    }

    /// First-layer features `sigma1(z_j . x_k)`, `n x m1`.
    pub fn features(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let d = self.d();
        DMatrix::from_fn(xs.len(), self.m1, |k, j| {
            let u: f64 = (0..d).map(|c| self.z[(j, c)] * xs[k][c]).sum();
            self.sigma1.value(u)
        })
    }

    /// Pre-activations `h_i(x_k)` from precomputed features, `m2 x n`.
    pub fn preactivations(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = (&self.w * phi.transpose()) * self.c_in();
        for mut col in h.column_iter_mut() {
            col += &self.b;
        }
        h
    }

    /// Network outputs from a pre-activation matrix.
    pub fn outputs_from_h(&self, h: &DMatrix<f64>) -> DVector<f64> {
        let c = self.c_out();
        DVector::from_iterator(
            h.ncols(),
            h.column_iter().map(|col| {
                c * col
                    .iter()
                    .zip(self.a.iter())
                    .map(|(&u, &a)| a * self.sigma2.value(u))
                    .sum::<f64>()
            }),
        )
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let pts = [x.to_vec()];
        self.outputs_from_h(&self.preactivations(&self.features(&pts)))[0]
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> DVector<f64> {
        if xs.is_empty() {
            return DVector::zeros(0);
        }
        self.outputs_from_h(&self.preactivations(&self.features(xs)))
    }

    /// The random-feature kernel of the frozen first layer.
    pub fn kernel_model(&self) -> KernelModel {
        KernelModel::from_features(self.z.clone(), self.sigma1)
    }

    /// Loss `(1/2n) sum_k (f(x_k) - y_k)^2` evaluated from scratch.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &DVector<f64>) -> f64 {
        let f = self.forward_batch(xs);
        (f - ys).norm_squared() / (2.0 * ys.len() as f64)
    }
}

/// A network together with its training data and cached forward pass.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub net: FiniteNet,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: DVector<f64>,
    /// Frozen first-layer features on the training set, `n x m1`.
    pub phi: DMatrix<f64>,
    pub dt: f64,
    pub step: usize,
    /// `m2 x n`.
    pub h: DMatrix<f64>,
    pub zeta: DVector<f64>,
    pub loss: f64,
}

impl TrainingState {
    pub fn new(net: FiniteNet, train_x: Vec<Vec<f64>>, train_y: &[f64], dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("train.dt must be > 0, got {dt}")));
        }
        if train_x.is_empty() || train_x.len() != train_y.len() {
            return Err(Error::Contract(
                "training inputs and labels must be non-empty and equal in length".into(),
            ));
        }
        let phi = net.features(&train_x);
        let n = train_x.len();
        let mut st = Self {
            h: DMatrix::zeros(net.m2, n),
            net,
            train_x,
            train_y: DVector::from_column_slice(train_y),
            phi,
            dt,
            step: 0,
            zeta: DVector::zeros(n),
            loss: 0.0,
        };
        st.refresh();
        Ok(st)
    }

    pub fn n(&self) -> usize {
        self.train_x.len()
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Recomputes pre-activations, residuals and loss from the parameters.
    pub fn refresh(&mut self) {
        self.h = self.net.preactivations(&self.phi);
        let f = self.net.outputs_from_h(&self.h);
        self.zeta = f - &self.train_y;
        self.loss = self.zeta.norm_squared() / (2.0 * self.n() as f64);
    }

    /// Training-set outputs `f(x_k)`.
    pub fn outputs(&self) -> DVector<f64> {
        &self.zeta + &self.train_y
    }

    /// `sigma1` Gram matrix of the frozen features on the training set,
    /// `(1/m1) Phi Phi^T`.
    pub fn gram_m1(&self) -> DMatrix<f64> {
        crate::linalg::symmetrize(&((&self.phi * self.phi.transpose()) / self.net.m1 as f64))
    }

    /// Exact loss gradient at the cached state.
    pub fn gradient(&self) -> Gradient {
        let net = &self.net;
        let n = self.n() as f64;
        let c_out = net.c_out();
        let (m2, nn) = (net.m2, self.n());
        let mut s_zeta = DVector::zeros(m2);
        let mut r = DMatrix::zeros(m2, nn);
        for k in 0..nn {
            let zk = self.zeta[k];
            for i in 0..m2 {
                let u = self.h[(i, k)];
                s_zeta[i] += zk * net.sigma2.value(u);
                r[(i, k)] = zk * net.sigma2.derivative(u);
            }
        }
        let r_sum = DVector::from_iterator(m2, r.row_iter().map(|row| row.sum()));
        let coef = DVector::from_iterator(m2, net.a.iter().map(|&a| c_out * a / n));
        let mut w = (&r * &self.phi) * net.c_in();
        for (i, mut row) in w.row_iter_mut().enumerate() {
            row *= coef[i];
        }
        Gradient {
            a: s_zeta * (c_out / n),
            w,
            b: r_sum.component_mul(&coef),
        }
    }

    /// One simultaneous Euler step of the gradient flow.
    pub fn euler_step(&mut self) -> Result<()> {
        let g = self.gradient();
        let (eta_a, eta_w, eta_b) = self.net.rates();
        let dt = self.dt;
        self.net.a.axpy(-dt * eta_a, &g.a, 1.0);
        self.net.w -= &g.w * (dt * eta_w);
        self.net.b.axpy(-dt * eta_b, &g.b, 1.0);
        self.step += 1;
        self.refresh();
        let finite = self.loss.is_finite()
            && self.net.w.iter().all(|v| v.is_finite())
            && self.net.a.iter().all(|v| v.is_finite())
            && self.net.b.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Divergence {
                model: "finite_model",
                step: self.step,
                max_residual: self.zeta.amax(),
            });
        }
        Ok(())
    }

    /// Per-neuron weight-space displacement `m1^(1/2 - alpha) |W_i - W0_i|`,
    /// which bounds the RKHS norm of the change in `h_i`.
    pub fn displacement_norms(&self, w0: &DMatrix<f64>) -> (f64, f64) {
        let scale = self.net.c_in() * (self.net.m1 as f64).sqrt();
        let norms: Vec<f64> = (&self.net.w - w0)
            .row_iter()
            .map(|r| scale * r.norm())
            .collect();
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        let sup = norms.iter().copied().fold(0.0, f64::max);
        (mean, sup)
    }
}

/// Number of Euler steps covering `[0, total_time]`.
pub fn step_count(total_time: f64, dt: f64) -> usize {
    if total_time <= 0.0 {
        0
    } else {
        // Guard against 200/0.05 = 4000.0000000000005 rounding up.
        ((total_time / dt) - 1e-9).ceil() as usize
    }
}

/// Loss history of a training run.
#[derive(Debug, Clone, Default)]
pub struct LossLog {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub losses: Vec<f64>,
    pub residuals: Vec<DVector<f64>>,
}

impl LossLog {
    pub fn push(&mut self, step: usize, t: f64, loss: f64, zeta: &DVector<f64>) {
        self.steps.push(step);
        self.times.push(t);
        self.losses.push(loss);
        self.residuals.push(zeta.clone());
    }
}

/// Runs `ceil(T/dt)` Euler steps, calling `on_log` at step 0, every
/// `log_every` steps and at the final step.
pub fn train_with<F>(
    st: &mut TrainingState,
    total_time: f64,
    log_every: usize,
    mut on_log: F,
) -> Result<()>
where
    F: FnMut(&TrainingState) -> Result<()>,
{
    let steps = step_count(total_time, st.dt);
    let every = log_every.max(1);
    on_log(st)?;
    for s in 1..=steps {
        st.euler_step()?;
        if s % every == 0 || s == steps {
            on_log(st)?;
        }
    }
    Ok(())
}

pub fn train(st: &mut TrainingState, total_time: f64, log_every: usize) -> Result<LossLog> {
    let mut log = LossLog::default();
    train_with(st, total_time, log_every, |s| {
        log.push(s.step, s.time(), s.loss, &s.zeta);
        Ok(())
    })?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets;

    fn shape(m1: usize, m2: usize, alpha: f64) -> NetShape {
        NetShape {
            m1,
            m2,
            d: 2,
            alpha,
            beta_a: 0.0,
            beta_b: 0.5,
            sigma1: Activation::Relu,
            sigma2: Activation::Tanh,
        }
    }

    fn tiny_net() -> FiniteNet {
        let mut net = init(shape(1, 1, 0.5), 0, InitSpec::default()).unwrap();
        net.a[0] = 2.0;
        net.w[(0, 0)] = 1.0;
        net.z.copy_from_slice(&[1.0, 0.0]);
        net
    }

    #[test]
    fn single_path_forward() {
        let net = tiny_net();
        let want = 2.0 * 1f64.tanh();
        assert!((net.forward(&[1.0, 0.0]) - want).abs() < 1e-15);
        assert!((want - 1.52318).abs() < 1e-5);
    }

    #[test]
    fn zero_a_or_zero_weights_give_zero_output() {
        let mut net = init(shape(5, 7, 0.5), 1, InitSpec::default()).unwrap();
        let x = [0.3, -0.8];
        let mut a0 = net.clone();
        a0.a.fill(0.0);
        assert_eq!(a0.forward(&x), 0.0);
        net.w.fill(0.0);
        assert_eq!(net.forward(&x), 0.0);
    }

    #[test]
    fn antisymmetric_pair_cancels() {
        let mut net = init(shape(6, 2, 0.5), 2, InitSpec::default()).unwrap();
        net.a = DVector::from_vec(vec![1.0, -1.0]);
        let row = net.w.row(0).clone_owned();
        net.w.set_row(1, &row);
        for x in [[1.0, 0.0], [0.2, 0.7], [-1.0, 0.4]] {
            assert_eq!(net.forward(&x), 0.0);
        }
    }

    #[test]
    fn negative_alpha_rejected() {
        assert!(matches!(
            init(shape(2, 2, -0.1), 0, InitSpec::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init(shape(4, 3, 0.5), 9, InitSpec::default()).unwrap();
        let b = init(shape(4, 3, 0.5), 9, InitSpec::default()).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.z, b.z);
        assert_eq!(a.a, b.a);
    }

    fn preact_std(alpha: f64, seed: u64) -> f64 {
        let net = init(shape(10_000, 2000, alpha), seed, InitSpec::default()).unwrap();
        let h = net.preactivations(&net.features(&[vec![1.0, 0.0]]));
        let col = h.column(0);
        let mean = col.mean();
        (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt()
    }

    #[test]
    fn preactivation_scale_alpha_one() {
        // Var_i h_i = m1^(1 - 2 alpha) * (1/m1) sum_j phi_j^2 ~ m1^-1 * G(x, x).
        let want = (0.5f64 / 10_000.0).sqrt();
        let s = preact_std(1.0, 4);
        assert!((s / want - 1.0).abs() < 0.2, "{s} vs {want}");
    }

    #[test]
    fn preactivation_scale_alpha_half() {
        let want = 0.5f64.sqrt();
        let mean: f64 = (0..10).map(|s| preact_std(0.5, 100 + s)).sum::<f64>() / 10.0;
        assert!((mean / want - 1.0).abs() < 0.1, "{mean} vs {want}");
    }

    fn small_state(beta_a: f64, seed: u64) -> TrainingState {
        let ds = datasets::task1(0.0, 0).unwrap();
        let mut sh = shape(8, 8, 0.5);
        sh.beta_a = beta_a;
        let net = init(sh, seed, InitSpec { a_scale: 2.0 }).unwrap();
        TrainingState::new(net, ds.train_x, &ds.train_y, 1e-3).unwrap()
    }

    #[test]
    fn perfect_fit_is_a_fixed_point() {
        let mut st = small_state(1.0, 3);
        st.train_y = st.net.outputs_from_h(&st.h);
        st.refresh();
        assert!(st.zeta.iter().all(|&z| z == 0.0));
        let before = st.net.clone();
        st.euler_step().unwrap();
        assert_eq!(st.net.a, before.a);
        assert_eq!(st.net.w, before.w);
        assert_eq!(st.net.b, before.b);
    }

    #[test]
    fn zero_beta_a_freezes_a() {
        let mut st = small_state(0.0, 5);
        let a0 = st.net.a.clone();
        for _ in 0..50 {
            st.euler_step().unwrap();
        }
        assert_eq!(st.net.a, a0);
        assert!(
            st.net.z
                == init(shape(8, 8, 0.5), 5, InitSpec { a_scale: 2.0 })
                    .unwrap()
                    .z
        );
    }

    #[test]
    fn cached_loss_matches_recomputation() {
        let mut st = small_state(0.3, 8);
        for _ in 0..20 {
            st.euler_step().unwrap();
            let fresh = st.net.loss(&st.train_x, &st.train_y);
            assert!((fresh - st.loss).abs() <= 1e-10 * st.loss.abs().max(1e-300));
        }
    }

    fn fd_loss(st: &TrainingState, edit: impl Fn(&mut FiniteNet, f64), eps: f64) -> f64 {
        let mut p = st.net.clone();
        edit(&mut p, eps);
        let mut m = st.net.clone();
        edit(&mut m, -eps);
        (p.loss(&st.train_x, &st.train_y) - m.loss(&st.train_x, &st.train_y)) / (2.0 * eps)
    }

    #[test]
    fn single_neuron_step_matches_finite_differences() {
        let ds = datasets::task1(0.0, 0).unwrap();
        let mut sh = shape(1, 1, 0.5);
        sh.beta_a = 1.0;
        let net = init(sh, 21, InitSpec::default()).unwrap();
        let st0 = TrainingState::new(net, ds.train_x, &ds.train_y, 1e-3).unwrap();
        let mut st = st0.clone();
        st.euler_step().unwrap();
        let (_, eta_w, _) = st0.net.rates();
        let dir = (st.net.w[(0, 0)] - st0.net.w[(0, 0)]) / st0.dt;
        let fd = fd_loss(&st0, |n, e| n.w[(0, 0)] += e, 1e-5);
        assert!((dir + eta_w * fd).abs() <= 1e-5 * (eta_w * fd).abs());
    }

    #[test]
    fn ntk_gradient_matches_finite_differences() {
        let ds = datasets::task1(0.0, 0).unwrap();
        let mut sh = shape(6, 5, 0.0);
        sh.beta_a = 0.7;
        let net = init(sh, 2, InitSpec::default()).unwrap();
        assert_eq!(net.param, Parameterization::Ntk);
        let st = TrainingState::new(net, ds.train_x, &ds.train_y, 1e-3).unwrap();
        let g = st.gradient();
        for i in 0..5 {
            let fa = fd_loss(&st, |n, e| n.a[i] += e, 1e-6);
            assert!((g.a[i] - fa).abs() <= 1e-6 * fa.abs().max(1e-8));
            let fb = fd_loss(&st, |n, e| n.b[i] += e, 1e-6);
            assert!((g.b[i] - fb).abs() <= 1e-6 * fb.abs().max(1e-8));
        }
    }

    #[test]
    fn step_count_rounding() {
        assert_eq!(step_count(0.0, 0.05), 0);
        assert_eq!(step_count(200.0, 0.05), 4000);
        assert_eq!(step_count(0.12, 0.05), 3);
    }

    #[test]
    fn zero_time_training_logs_only_initial_state() {
        let mut st = small_state(0.0, 1);
        let log = train(&mut st, 0.0, 10).unwrap();
        assert_eq!(log.steps, vec![0]);
        assert_eq!(log.losses.len(), 1);
    }

    #[test]
    fn divergence_is_reported() {
        let mut st = small_state(1.0, 1);
        st.net.w[(0, 0)] = f64::NAN;
        st.refresh();
        assert!(matches!(st.euler_step(), Err(Error::Divergence { .. })));
    }
}
