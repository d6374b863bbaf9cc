//! Experiment driver: builds models from a [`RunConfig`], runs them with
//! logging, and writes `manifest.json`, CSV tables and `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::activations::{Activation, GaussQuadrature, Interval};
use crate::analysis::certificates::{check_oppenheim, check_pl};
use crate::analysis::complexity::{gen_bound_rhs, BoundConstants, ComplexityTrack};
use crate::analysis::rate::{fit_rate, log_log_slope};
use crate::analysis::snapshot::{kernel_snapshot, snapshot_mf, KernelSnapshot};
use crate::analysis::wasserstein::wasserstein1_uniform;
use crate::analysis::xi::xi_mass;
use crate::config::{KernelModeCfg, RunConfig, RunMode};
use crate::datasets::{self, Dataset};
use crate::error::{Error, Result};
use crate::finite_model::{self, InitSpec, NetShape, TrainingState};
use crate::kernel::{FeatureMapContext, KernelModel};
use crate::linalg;
use crate::mf_model::{self, MfShape, MfState, Regime};
use crate::trajectory::{TrajectoryRecord, TrajectoryRow};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable capping the worker pool used by sweeps.
pub const THREADS_ENV: &str = "P3L_THREADS";

pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.train_csv {
        None => datasets::by_task(cfg.data.task, cfg.data.noise_sigma, cfg.data.seed),
        Some(train) => {
            let train = datasets::read_csv_file(train)?;
            let test = match &cfg.data.test_csv {
                Some(p) => datasets::read_csv_file(p)?,
                None => (Vec::new(), Vec::new()),
            };
            Dataset::from_parts("csv", train, test)
        }
    }
}

/// The kernel seen by the mean-field model. The closed form exists only for
/// a ReLU first layer; other activations use random features.
pub fn build_kernel(cfg: &RunConfig, dim: usize) -> Result<KernelModel> {
    let analytic = cfg.kernel.mode == KernelModeCfg::Analytic;
    if analytic && cfg.model.sigma1 == Activation::Relu {
        return Ok(KernelModel::analytic(dim));
    }
    if analytic {
        log::warn!(
            "no closed-form kernel for sigma1 = {}; using {} random features",
            cfg.model.sigma1,
            cfg.kernel.m1
        );
    }
    KernelModel::monte_carlo(dim, cfg.kernel.m1, cfg.model.sigma1, cfg.kernel.seed)
}

pub fn build_context(cfg: &RunConfig, ds: &Dataset) -> Result<Arc<FeatureMapContext>> {
    let mut km = build_kernel(cfg, ds.dim())?;
    km.record_domain(ds.all_inputs());
    Ok(Arc::new(FeatureMapContext::new(
        km,
        ds.train_x.clone(),
        cfg.kernel.rank_tol,
    )?))
}

pub fn net_shape(cfg: &RunConfig, m1: usize, m2: usize, d: usize) -> NetShape {
    NetShape {
        m1,
        m2,
        d,
        alpha: cfg.model.alpha,
        beta_a: cfg.model.beta_a,
        beta_b: cfg.model.beta_b,
        sigma1: cfg.model.sigma1,
        sigma2: cfg.model.sigma2,
    }
}

pub fn init_spec(cfg: &RunConfig) -> InitSpec {
    InitSpec {
        a_scale: cfg.model.a_scale,
    }
}

pub fn build_finite(
    cfg: &RunConfig,
    ds: &Dataset,
    m1: usize,
    m2: usize,
    seed: u64,
) -> Result<TrainingState> {
    let net = finite_model::init(net_shape(cfg, m1, m2, ds.dim()), seed, init_spec(cfg))?;
    TrainingState::new(net, ds.train_x.clone(), &ds.train_y, cfg.train.dt)
}

pub fn mf_regime(cfg: &RunConfig) -> Result<Regime> {
    cfg.regime().ok_or_else(|| {
        Error::Config(format!(
            "model.alpha = {} has no mean-field limit here; use alpha >= 0.5 or set mf.regime",
            cfg.model.alpha
        ))
    })
}

pub fn build_mf(
    cfg: &RunConfig,
    ds: &Dataset,
    ctx: Arc<FeatureMapContext>,
    seed: u64,
) -> Result<MfState> {
    let regime = mf_regime(cfg)?;
    let shape = MfShape {
        m: cfg
            .mf
            .m
            .unwrap_or_else(|| mf_model::default_particle_count(regime)),
        regime,
        beta_a: cfg.model.beta_a,
        beta_b: cfg.model.beta_b,
        sigma2: cfg.model.sigma2,
    };
    let ens = mf_model::mf_init(ctx, shape, seed, init_spec(cfg))?;
    MfState::new(ens, &ds.train_y, cfg.train.dt)
}

/// Settings of one logged simulation.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub total_time: f64,
    pub log_every: usize,
    pub snapshots: bool,
    pub test_loss: bool,
    /// Stop as soon as the training loss is at or below this value.
    pub stop_below: Option<f64>,
    pub a_hat: f64,
    pub interval: Interval,
}

impl RunOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            total_time: cfg.train.total_time,
            log_every: cfg.train.log_every,
            snapshots: cfg.analysis.snapshots,
            test_loss: cfg.analysis.test_loss,
            stop_below: None,
            a_hat: cfg.a_hat(),
            interval: Interval::new(cfg.analysis.xi_lo, cfg.analysis.xi_hi),
        }
    }
}

/// Common interface of the finite-width and mean-field simulations.
pub trait Dynamics {
    fn advance(&mut self) -> Result<()>;
    fn step(&self) -> usize;
    fn dt(&self) -> f64;
    fn loss(&self) -> f64;
    fn n(&self) -> usize;
    fn beta_a(&self) -> f64;
    fn sigma2(&self) -> Activation;
    fn snapshot(&self) -> KernelSnapshot;
    fn test_loss(&self) -> Result<Option<f64>>;
    fn xi_mass_min(&self, a_hat: f64, interval: Interval) -> f64;
    fn displacement(&self) -> (f64, f64);

    fn time(&self) -> f64 {
        self.step() as f64 * self.dt()
    }
}

/// Finite-width simulation with its initial weights and cached test features.
pub struct FiniteRunner {
    pub state: TrainingState,
    pub w0: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    test_phi: Option<DMatrix<f64>>,
    test_y: DVector<f64>,
}

impl FiniteRunner {
    pub fn new(state: TrainingState, ds: &Dataset) -> Self {
        let test_phi = (!ds.test_x.is_empty()).then(|| state.net.features(&ds.test_x));
        Self {
            w0: state.net.w.clone(),
            gram: state.gram_m1(),
            test_y: DVector::from_column_slice(&ds.test_y),
            test_phi,
            state,
        }
    }
}

impl Dynamics for FiniteRunner {
    fn advance(&mut self) -> Result<()> {
        self.state.euler_step()
    }
    fn step(&self) -> usize {
        self.state.step
    }
    fn dt(&self) -> f64 {
        self.state.dt
    }
    fn loss(&self) -> f64 {
        self.state.loss
    }
    fn n(&self) -> usize {
        self.state.n()
    }
    fn beta_a(&self) -> f64 {
        self.state.net.beta_a
    }
    fn sigma2(&self) -> Activation {
        self.state.net.sigma2
    }
    fn snapshot(&self) -> KernelSnapshot {
        let st = &self.state;
        kernel_snapshot(
            st.time(),
            &st.net.a,
            &st.h,
            &self.gram,
            st.net.beta_a,
            st.net.sigma2,
        )
    }
    fn test_loss(&self) -> Result<Option<f64>> {
        Ok(self.test_phi.as_ref().map(|phi| {
            let net = &self.state.net;
            let f = net.outputs_from_h(&net.preactivations(phi));
            (f - &self.test_y).norm_squared() / (2.0 * self.test_y.len() as f64)
        }))
    }
    fn xi_mass_min(&self, a_hat: f64, interval: Interval) -> f64 {
        xi_mass(&self.state.net.a, &self.state.h, a_hat, interval).min()
    }
    fn displacement(&self) -> (f64, f64) {
        self.state.displacement_norms(&self.w0)
    }
}

/// Mean-field simulation with feature-map coordinates and conditional
/// deviations of the test inputs computed once.
pub struct MfRunner {
    pub state: MfState,
    quad: GaussQuadrature,
    /// `N x n`, row `j` is `X(x_j)`.
    test_feat: Option<DMatrix<f64>>,
    test_tau: Vec<f64>,
    test_y: Vec<f64>,
}

impl MfRunner {
    pub fn new(state: MfState, ds: &Dataset, quad_order: usize, with_test: bool) -> Result<Self> {
        let quad = GaussQuadrature::new(quad_order)?;
        let ctx = &state.ensemble.ctx;
        let (test_feat, test_tau) = if with_test && !ds.test_x.is_empty() {
            let n = ctx.n();
            let rows: Vec<DVector<f64>> = ds.test_x.iter().map(|x| ctx.feature_map(x)).collect();
            let feat = DMatrix::from_fn(rows.len(), n, |j, k| rows[j][k]);
            let tau = ds
                .test_x
                .iter()
                .map(|x| ctx.tau(x))
                .collect::<Result<Vec<_>>>()?;
            (Some(feat), tau)
        } else {
            (None, Vec::new())
        };
        Ok(Self {
            state,
            quad,
            test_feat,
            test_tau,
            test_y: ds.test_y.clone(),
        })
    }

    /// Outputs at the cached test inputs.
    pub fn test_outputs(&self) -> Option<Vec<f64>> {
        let feat = self.test_feat.as_ref()?;
        let e = &self.state.ensemble;
        let mut u = &e.lambda * feat.transpose();
        for mut col in u.column_iter_mut() {
            col += &e.b;
        }
        let sigma = e.sigma2;
        let half = e.regime == Regime::Half;
        let m = e.m();
        let out = (0..feat.nrows())
            .into_par_iter()
            .map(|j| {
                let tau = self.test_tau[j];
                let mut terms: Vec<f64> = (0..m)
                    .map(|i| {
                        let ui = u[(i, j)];
                        let v = if half {
                            self.quad
                                .expectation_unchecked(|z| sigma.value(tau * z + ui))
                        } else {
                            sigma.value(ui)
                        };
                        e.a[i] * v
                    })
                    .collect();
                linalg::sorted_sum(&mut terms) / m as f64
            })
            .collect();
        Some(out)
    }

    pub fn quadrature(&self) -> &GaussQuadrature {
        &self.quad
    }
}

impl Dynamics for MfRunner {
    fn advance(&mut self) -> Result<()> {
        self.state.mf_euler_step()
    }
    fn step(&self) -> usize {
        self.state.step
    }
    fn dt(&self) -> f64 {
        self.state.dt
    }
    fn loss(&self) -> f64 {
        self.state.loss
    }
    fn n(&self) -> usize {
        self.state.n()
    }
    fn beta_a(&self) -> f64 {
        self.state.ensemble.beta_a
    }
    fn sigma2(&self) -> Activation {
        self.state.ensemble.sigma2
    }
    fn snapshot(&self) -> KernelSnapshot {
        snapshot_mf(&self.state)
    }
    fn test_loss(&self) -> Result<Option<f64>> {
        Ok(self.test_outputs().map(|f| {
            let s: f64 = f
                .iter()
                .zip(&self.test_y)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            s / (2.0 * f.len() as f64)
        }))
    }
    fn xi_mass_min(&self, a_hat: f64, interval: Interval) -> f64 {
        xi_mass(&self.state.ensemble.a, &self.state.preact, a_hat, interval).min()
    }
    fn displacement(&self) -> (f64, f64) {
        self.state.displacement_norms()
    }
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub record: TrajectoryRecord,
    pub snapshots: Vec<KernelSnapshot>,
    pub track: ComplexityTrack,
    pub stopped_early: bool,
}

fn log_row<D: Dynamics>(
    d: &D,
    opts: &RunOptions,
    omega: f64,
    snaps: &mut Vec<KernelSnapshot>,
) -> Result<TrajectoryRow> {
    let snap = opts.snapshots.then(|| d.snapshot());
    let (mean_disp, sup_disp) = d.displacement();
    let loss = d.loss();
    let row = TrajectoryRow {
        step: d.step(),
        t: d.time(),
        loss,
        test_loss: if opts.test_loss { d.test_loss()? } else { None },
        lambda_min_kw: snap.as_ref().map(|s| s.lambda_min_kw),
        lambda_min_k: snap.as_ref().map(|s| s.lambda_min_k),
        det_kw: snap.as_ref().map(|s| s.det_kw()),
        oppenheim_lower: snap.as_ref().map(|s| s.oppenheim_lower()),
        omega,
        gen_bound_rhs: gen_bound_rhs(
            loss,
            omega,
            d.n(),
            0.1,
            opts.a_hat,
            d.beta_a(),
            BoundConstants::for_activation(d.sigma2()),
        )?,
        xi_mass_min: d.xi_mass_min(opts.a_hat, opts.interval),
        mean_disp,
        sup_disp,
    };
    snaps.extend(snap);
    Ok(row)
}

/// Step-by-step recorder: integrates `omega` after every step and logs a
/// row at step 0, every `log_every` steps, the last step and the
/// early-stopping step.
pub struct Logger<'o> {
    opts: &'o RunOptions,
    steps: usize,
    track: ComplexityTrack,
    rows: Vec<TrajectoryRow>,
    snapshots: Vec<KernelSnapshot>,
    stopped_early: bool,
}

impl<'o> Logger<'o> {
    pub fn start<D: Dynamics>(d: &D, opts: &'o RunOptions) -> Result<Self> {
        let mut snapshots = Vec::new();
        let rows = vec![log_row(d, opts, 0.0, &mut snapshots)?];
        Ok(Self {
            opts,
            steps: finite_model::step_count(opts.total_time, d.dt()),
            track: ComplexityTrack::new(d.time(), d.loss()),
            rows,
            snapshots,
            stopped_early: opts.stop_below.is_some_and(|s| d.loss() <= s),
        })
    }

    /// Total number of steps of the run.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_log_step(&self, s: usize) -> bool {
        s.is_multiple_of(self.opts.log_every.max(1)) || s == self.steps
    }

    /// Call after step `s` (1-based). Returns `true` once the stopping
    /// threshold is reached.
    pub fn observe<D: Dynamics>(&mut self, d: &D, s: usize) -> Result<bool> {
        self.track.observe(d.time(), d.loss());
        let stop = self.opts.stop_below.is_some_and(|thr| d.loss() <= thr);
        if self.is_log_step(s) || stop {
            self.rows.push(log_row(
                d,
                self.opts,
                self.track.omega,
                &mut self.snapshots,
            )?);
        }
        self.stopped_early |= stop;
        Ok(stop)
    }

    pub fn finish(self) -> RunLog {
        RunLog {
            record: TrajectoryRecord { rows: self.rows },
            snapshots: self.snapshots,
            track: self.track,
            stopped_early: self.stopped_early,
        }
    }
}

/// Runs the dynamics for `ceil(T/dt)` steps under a [`Logger`].
pub fn simulate<D: Dynamics>(d: &mut D, opts: &RunOptions) -> Result<RunLog> {
    let mut logger = Logger::start(d, opts)?;
    if !logger.stopped_early {
        for s in 1..=logger.steps() {
            d.advance()?;
            if logger.observe(d, s)? {
                break;
            }
        }
    }
    Ok(logger.finish())
}

/// `|K_T - K_0|_F / |K_0|_F` between the first and last snapshots.
pub fn kernel_drift(snaps: &[KernelSnapshot]) -> Option<f64> {
    let (first, last) = (snaps.first()?, snaps.last()?);
    Some((&last.k - &first.k).norm() / first.k.norm())
}

/// Neuron evaluations `(a_i, h_i(x_1), ..., h_i(x_n))` of a finite network.
pub fn finite_cloud(st: &TrainingState) -> Vec<Vec<f64>> {
    (0..st.net.m2)
        .map(|i| {
            std::iter::once(st.net.a[i])
                .chain(st.h.row(i).iter().copied())
                .collect()
        })
        .collect()
}

/// Particle evaluations `(a_i, lambda_i . x~_1 + b_i, ...)` of the mean-field
/// ensemble.
pub fn mf_cloud(st: &MfState) -> Vec<Vec<f64>> {
    (0..st.ensemble.m())
        .map(|i| {
            std::iter::once(st.ensemble.a[i])
                .chain(st.preact.row(i).iter().copied())
                .collect()
        })
        .collect()
}

/// I.i.d. draws of `(a, h)` with `a` uniform on `{-a_scale, a_scale}` and
/// `h ~ N(0, var)`.
pub fn gaussian_reference_cloud(a_scale: f64, var: f64, size: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, var.max(0.0).sqrt()).expect("finite variance");
    (0..size)
        .map(|_| {
            let a = if rand::Rng::random::<bool>(&mut rng) {
                a_scale
            } else {
                -a_scale
            };
            vec![a, normal.sample(&mut rng)]
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Runs `f` over `items` on a pool capped by `P3L_THREADS`, keeping the
/// input order in the output.
pub fn par_map<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&t| t >= 1);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Spectral-norm error of random-feature Gram matrices against the exact
/// kernel, for each feature count and seed.
#[derive(Debug, Clone)]
pub struct KernelMcTable {
    pub m1: Vec<usize>,
    pub errors: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
    pub slope: f64,
}

pub fn kernel_mc_scaling(
    points: &[Vec<f64>],
    m1_list: &[usize],
    seeds: usize,
    base_seed: u64,
) -> Result<KernelMcTable> {
    let d = points.first().map_or(2, Vec::len);
    let exact = KernelModel::analytic(d).gram(points);
    let jobs: Vec<(usize, u64)> = m1_list
        .iter()
        .flat_map(|&m| (0..seeds as u64).map(move |s| (m, s)))
        .collect();
    let errs = par_map(&jobs, |&(m, s)| {
        let km = KernelModel::monte_carlo(d, m, Activation::Relu, base_seed.wrapping_add(s))?;
        Ok(linalg::sym_spectral_norm(&(km.gram(points) - &exact)))
    })?;
    let errors: Vec<Vec<f64>> = errs.chunks(seeds.max(1)).map(<[f64]>::to_vec).collect();
    let medians: Vec<f64> = errors.iter().map(|e| median(e)).collect();
    let xs: Vec<f64> = m1_list.iter().map(|&m| m as f64).collect();
    Ok(KernelMcTable {
        m1: m1_list.to_vec(),
        slope: log_log_slope(&xs, &medians),
        errors,
        medians,
    })
}

/// `W1` between finite-width and mean-field clouds after training both to
/// `t_eval`, per width and seed, plus the initialization-time distance of
/// each finite network to the Gaussian reference law.
#[derive(Debug, Clone)]
pub struct WidthSweep {
    pub widths: Vec<usize>,
    pub w1: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
    pub w1_init: Vec<Vec<f64>>,
    pub init_medians: Vec<f64>,
}

/// Mean over training points of `W1((a_i, h_i(x_k))_i, rho_a x N(0, G_kk))`.
pub fn lln_distance(st: &TrainingState, gram_diag: &[f64], a_scale: f64, seed: u64) -> Result<f64> {
    let m = st.net.m2;
    let mut acc = 0.0;
    for (k, &gkk) in gram_diag.iter().enumerate() {
        let cloud: Vec<Vec<f64>> = (0..m).map(|i| vec![st.net.a[i], st.h[(i, k)]]).collect();
        let reference = gaussian_reference_cloud(
            a_scale,
            gkk,
            m,
            seed.wrapping_mul(1000).wrapping_add(k as u64),
        );
        acc += wasserstein1_uniform(&cloud, &reference, seed ^ k as u64)?;
    }
    Ok(acc / gram_diag.len() as f64)
}

pub fn width_sweep(
    cfg: &RunConfig,
    ds: &Dataset,
    ctx: Arc<FeatureMapContext>,
) -> Result<WidthSweep> {
    let seeds = cfg.sweep.seeds as u64;
    let widths = cfg.sweep.widths.clone();
    let opts = RunOptions {
        total_time: cfg.sweep.t_eval,
        log_every: usize::MAX,
        snapshots: false,
        test_loss: false,
        stop_below: None,
        a_hat: cfg.a_hat(),
        interval: Interval::new(cfg.analysis.xi_lo, cfg.analysis.xi_hi),
    };
    let gdiag: Vec<f64> = ctx.gram().diagonal().iter().copied().collect();
    // Mean-field references, one per seed.
    let seed_list: Vec<u64> = (0..seeds).collect();
    let references = par_map(&seed_list, |&s| {
        let st = build_mf(cfg, ds, ctx.clone(), cfg.mf.seed.wrapping_add(s))?;
        let mut r = MfRunner::new(st, ds, cfg.mf.quad_order, false)?;
        simulate(&mut r, &opts)?;
        Ok(mf_cloud(&r.state))
    })?;
    let jobs: Vec<(usize, u64)> = widths
        .iter()
        .flat_map(|&w| (0..seeds).map(move |s| (w, s)))
        .collect();
    let results = par_map(&jobs, |&(w, s)| {
        let seed = cfg.model.seed.wrapping_add(s);
        let st = build_finite(cfg, ds, w, w, seed)?;
        let init = lln_distance(&st, &gdiag, cfg.model.a_scale, seed)?;
        let mut r = FiniteRunner::new(st, ds);
        simulate(&mut r, &opts)?;
        let d = wasserstein1_uniform(&finite_cloud(&r.state), &references[s as usize], seed)?;
        Ok((d, init))
    })?;
    let per = seeds.max(1) as usize;
    let w1: Vec<Vec<f64>> = results
        .chunks(per)
        .map(|c| c.iter().map(|r| r.0).collect())
        .collect();
    let w1_init: Vec<Vec<f64>> = results
        .chunks(per)
        .map(|c| c.iter().map(|r| r.1).collect())
        .collect();
    Ok(WidthSweep {
        medians: w1.iter().map(|v| median(v)).collect(),
        init_medians: w1_init.iter().map(|v| median(v)).collect(),
        widths,
        w1,
        w1_init,
    })
}

/// One noisy-label mean-field run trained until the loss threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEntry {
    pub sigma: f64,
    pub seed: u64,
    pub reached: bool,
    pub t: f64,
    pub loss: f64,
    pub omega: f64,
    pub test_loss: Option<f64>,
    pub gen_bound: f64,
}

pub fn noise_study(cfg: &RunConfig) -> Result<Vec<NoiseEntry>> {
    let jobs: Vec<(f64, u64)> = cfg
        .sweep
        .noise_sigmas
        .iter()
        .flat_map(|&s| (0..cfg.sweep.seeds as u64).map(move |k| (s, k)))
        .collect();
    par_map(&jobs, |&(sigma, k)| {
        let mut c = cfg.clone();
        c.data.noise_sigma = sigma;
        c.data.seed = cfg.data.seed.wrapping_add(k);
        let ds = build_dataset(&c)?;
        let ctx = build_context(&c, &ds)?;
        let st = build_mf(&c, &ds, ctx, cfg.mf.seed.wrapping_add(k))?;
        let mut r = MfRunner::new(st, &ds, c.mf.quad_order, c.analysis.test_loss)?;
        let opts = RunOptions {
            log_every: usize::MAX,
            snapshots: false,
            test_loss: false,
            stop_below: Some(cfg.sweep.loss_threshold),
            ..RunOptions::from_config(&c)
        };
        let log = simulate(&mut r, &opts)?;
        let n = ds.n();
        let consts = BoundConstants::for_activation(c.model.sigma2);
        Ok(NoiseEntry {
            sigma,
            seed: k,
            reached: log.stopped_early,
            t: r.time(),
            loss: r.loss(),
            omega: log.track.omega,
            test_loss: r.test_loss()?,
            gen_bound: gen_bound_rhs(
                r.loss(),
                log.track.omega,
                n,
                c.analysis.delta,
                c.a_hat(),
                c.model.beta_a,
                consts,
            )?,
        })
    })
}

/// Dry-run findings for a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub failures: Vec<String>,
    pub n: usize,
    pub lambda_min_g: f64,
    pub lambda_max_g: f64,
    /// `dt * a_scale^2 * lambda_max(G) / n`, the step size against the
    /// fastest linearized mode of the loss.
    pub stability_number: f64,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn validate(cfg: &RunConfig) -> Result<ValidationReport> {
    let mut failures = Vec::new();
    let ds = build_dataset(cfg)?;
    for (k, l) in ds.aligned_pairs() {
        failures.push(format!(
            "training inputs {k} and {l} are positively aligned"
        ));
    }
    let km = build_kernel(cfg, ds.dim())?;
    let g = km.gram(&ds.train_x);
    let eig = linalg::eigenvalues_desc(&g);
    let lambda_max_g = eig.first().copied().unwrap_or(0.0);
    let lambda_min_g = eig.last().copied().unwrap_or(0.0);
    if lambda_min_g <= 1e-10 {
        failures.push(format!(
            "Gram matrix is not positive definite: lambda_min(G) = {lambda_min_g:e}"
        ));
    }
    let n = ds.n();
    let stability_number = cfg.train.dt * cfg.model.a_scale.powi(2) * lambda_max_g / n as f64;
    if stability_number >= cfg.analysis.stability_limit {
        failures.push(format!(
            "train.dt too large: dt * a_scale^2 * lambda_max(G) / n = {stability_number:.3} >= {}",
            cfg.analysis.stability_limit
        ));
    }
    let alpha = cfg.model.alpha;
    match (cfg.mf.regime, Regime::for_alpha(alpha)) {
        (Some(r), Some(implied)) if r != implied => failures.push(format!(
            "mf.regime = {} contradicts model.alpha = {alpha} (implies {})",
            r.name(),
            implied.name()
        )),
        (Some(r), None) => failures.push(format!(
            "mf.regime = {} contradicts model.alpha = {alpha}, which has no mean-field limit",
            r.name()
        )),
        _ => {}
    }
    let needs_mf = matches!(
        cfg.run.mode,
        RunMode::Mf | RunMode::Compare | RunMode::SweepWidth | RunMode::NoiseStudy
    );
    if needs_mf && cfg.regime().is_none() {
        failures.push(format!(
            "run.mode needs a mean-field regime but model.alpha = {alpha} has none"
        ));
    }
    Ok(ValidationReport {
        failures,
        n,
        lambda_min_g,
        lambda_max_g,
        stability_number,
    })
}

/// SHA-256 of the resolved config in canonical JSON (sorted keys).
pub fn manifest_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_json().to_string().as_bytes()))
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Where a run writes its files.
pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.run.out_dir.join(&cfg.run.name)
}

/// Writes the manifest, runs the configured mode and writes its artifacts.
/// Returns the run directory.
pub fn run(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = run_dir(cfg);
    fs::create_dir_all(&dir)?;
    let hash = manifest_hash(cfg);
    write_json(
        &dir.join("manifest.json"),
        &json!({ "version": VERSION, "config_sha256": hash, "config": cfg.to_json() }),
    )?;
    let body = match cfg.run.mode {
        RunMode::Finite => run_single(cfg, &dir, false)?,
        RunMode::Mf => run_single(cfg, &dir, true)?,
        RunMode::Compare => run_compare(cfg, &dir)?,
        RunMode::SweepWidth => run_sweep_width(cfg, &dir)?,
        RunMode::SweepKernelMc => run_sweep_kernel(cfg, &dir)?,
        RunMode::NoiseStudy => run_noise(cfg, &dir)?,
    };
    let mut summary = json!({ "mode": cfg.to_json()["run"]["mode"], "config_sha256": hash });
    if let (Value::Object(s), Value::Object(b)) = (&mut summary, body) {
        s.extend(b);
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(dir)
}

fn run_summary<D: Dynamics>(
    cfg: &RunConfig,
    d: &D,
    log: &RunLog,
    g_stats: (f64, f64, f64),
) -> Result<Value> {
    let rec = &log.record;
    let n = d.n();
    let times = rec.times();
    let losses = rec.losses();
    let lmins = rec.lambda_min_kw();
    let rate = fit_rate(&times, &losses, lmins.as_deref(), n);
    let pl = lmins.as_ref().map(|l| check_pl(&times, &losses, l, n, 0.0));
    let opp_fail = log
        .snapshots
        .iter()
        .filter(|s| !check_oppenheim(s).ok)
        .count();
    let last = rec.rows.last().expect("at least the initial row");
    let consts = BoundConstants::for_activation(d.sigma2());
    let (g_min, lambda_min_g, g_max) = g_stats;
    let a_hat = cfg.a_hat();
    let rho_mass = if a_hat <= cfg.model.a_scale { 0.5 } else { 0.0 };
    let (k_int, k_const) = cfg.model.sigma2.derivative_floor();
    Ok(json!({
        "n": n,
        "final": {
            "step": last.step,
            "t": last.t,
            "loss": last.loss,
            "test_loss": last.test_loss,
            "omega": log.track.omega,
            "gen_bound_rhs": gen_bound_rhs(last.loss, log.track.omega, n, cfg.analysis.delta, a_hat, cfg.model.beta_a, consts)?,
            "delta": cfg.analysis.delta,
            "mean_disp": last.mean_disp,
            "sup_disp": last.sup_disp,
        },
        "rate": {
            "fitted_rate": rate.fitted_rate,
            "r_squared": if rate.r_squared.is_finite() { json!(rate.r_squared) } else { Value::Null },
            "window": rate.window.map(|(a, b)| json!([a, b])),
            "envelope_rate": rate.envelope_rate,
        },
        "pl": pl.map(|p| json!({
            "min_slack": p.min_slack(),
            "tolerance": p.tolerance,
            "violations": p.violations(),
        })),
        "oppenheim": { "checked": log.snapshots.len(), "failures": opp_fail },
        "kernel_drift": kernel_drift(&log.snapshots),
        "rate_certificate": {
            "a_hat": a_hat,
            "rho_a_mass_at_or_above_a_hat": rho_mass,
            "interval": [cfg.analysis.xi_lo, cfg.analysis.xi_hi],
            "derivative_floor_interval": [k_int.lo, k_int.hi],
            "derivative_floor": k_const,
            "g_min": g_min,
            "lambda_min_g": lambda_min_g,
            "g_max": g_max,
            "xi_mass_min": rec.rows.iter().map(|r| r.xi_mass_min).fold(f64::INFINITY, f64::min),
        },
    }))
}

fn run_single(cfg: &RunConfig, dir: &Path, mf: bool) -> Result<Value> {
    let ds = build_dataset(cfg)?;
    let opts = RunOptions::from_config(cfg);
    let (mut summary, rec, drift_rows) = if mf {
        let ctx = build_context(cfg, &ds)?;
        let g_stats = (
            ctx.spectral.g_min(),
            ctx.spectral.lambda_min(),
            ctx.kernel.g_max,
        );
        let st = build_mf(cfg, &ds, ctx, cfg.mf.seed)?;
        let mut r = MfRunner::new(st, &ds, cfg.mf.quad_order, opts.test_loss)?;
        let log = simulate(&mut r, &opts)?;
        let mut s = run_summary(cfg, &r, &log, g_stats)?;
        s["particles"] = json!(r.state.ensemble.m());
        s["regime"] = json!(r.state.ensemble.regime.name());
        (s, log.record, None)
    } else {
        let st = build_finite(cfg, &ds, cfg.model.m1, cfg.model.m2, cfg.model.seed)?;
        let mut r = FiniteRunner::new(st, &ds);
        let spec = crate::kernel::spectral(&r.gram, cfg.kernel.rank_tol)?;
        let mut km = r.state.net.kernel_model();
        km.record_domain(ds.all_inputs());
        let g_stats = (spec.g_min(), spec.lambda_min(), km.g_max);
        let log = simulate(&mut r, &opts)?;
        let mut s = run_summary(cfg, &r, &log, g_stats)?;
        s["parameterization"] = json!(
            if r.state.net.param == finite_model::Parameterization::Ntk {
                "ntk"
            } else {
                "mean_field"
            }
        );
        let drift: Vec<(usize, f64, f64)> = log
            .snapshots
            .iter()
            .zip(&log.record.rows)
            .map(|(sn, row)| {
                (
                    row.step,
                    row.t,
                    (&sn.k - &log.snapshots[0].k).norm() / log.snapshots[0].k.norm(),
                )
            })
            .collect();
        (s, log.record, Some(drift))
    };
    let traj = dir.join("trajectory.csv");
    rec.write_csv(fs::File::create(&traj)?)?;
    summary["trajectory_sha256"] = json!(sha256_file(&traj)?);
    if let Some(drift) = drift_rows.filter(|d| !d.is_empty()) {
        let mut w = csv::Writer::from_path(dir.join("kernel_drift.csv"))?;
        w.write_record(["step", "t", "kernel_drift"])?;
        for (s, t, d) in drift {
            w.write_record([s.to_string(), format!("{t:e}"), format!("{d:e}")])?;
        }
        w.flush()?;
    }
    Ok(summary)
}

fn run_compare(cfg: &RunConfig, dir: &Path) -> Result<Value> {
    let ds = build_dataset(cfg)?;
    let ctx = build_context(cfg, &ds)?;
    let opts = RunOptions::from_config(cfg);
    let mut fin = FiniteRunner::new(
        build_finite(cfg, &ds, cfg.model.m1, cfg.model.m2, cfg.model.seed)?,
        &ds,
    );
    let mut mf = MfRunner::new(
        build_mf(cfg, &ds, ctx, cfg.mf.seed)?,
        &ds,
        cfg.mf.quad_order,
        opts.test_loss,
    )?;
    let mut fin_log = Logger::start(&fin, &opts)?;
    let mut mf_log = Logger::start(&mf, &opts)?;
    let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
    w.write_record([
        "step",
        "t",
        "point",
        "finite_output",
        "mf_output",
        "abs_diff",
        "w1_preact",
    ])?;
    let mut max_diff: f64 = 0.0;
    let mut last_w1 = f64::NAN;
    let mut emit =
        |fin: &FiniteRunner, mf: &MfRunner, w: &mut csv::Writer<fs::File>| -> Result<()> {
            let f_out = fin.state.outputs();
            let w1 = wasserstein1_uniform(
                &finite_cloud(&fin.state),
                &mf_cloud(&mf.state),
                cfg.model.seed,
            )?;
            last_w1 = w1;
            for k in 0..ds.n() {
                let (a, b) = (f_out[k], mf.state.g[k]);
                max_diff = max_diff.max((a - b).abs());
                w.write_record([
                    fin.state.step.to_string(),
                    format!("{:e}", fin.time()),
                    k.to_string(),
                    format!("{a:e}"),
                    format!("{b:e}"),
                    format!("{:e}", (a - b).abs()),
                    format!("{w1:e}"),
                ])?;
            }
            Ok(())
        };
    emit(&fin, &mf, &mut w)?;
    for s in 1..=fin_log.steps() {
        fin.advance()?;
        mf.advance()?;
        fin_log.observe(&fin, s)?;
        mf_log.observe(&mf, s)?;
        if fin_log.is_log_step(s) {
            emit(&fin, &mf, &mut w)?;
        }
    }
    w.flush()?;
    mf_log
        .finish()
        .record
        .write_csv(fs::File::create(dir.join("trajectory.csv"))?)?;
    fin_log
        .finish()
        .record
        .write_csv(fs::File::create(dir.join("trajectory_finite.csv"))?)?;
    Ok(json!({
        "n": ds.n(),
        "width": [cfg.model.m1, cfg.model.m2],
        "particles": mf.state.ensemble.m(),
        "final_loss_finite": fin.loss(),
        "final_loss_mf": mf.loss(),
        "max_abs_output_diff": max_diff,
        "final_w1_preact": last_w1,
        "trajectory_sha256": sha256_file(&dir.join("trajectory.csv"))?,
    }))
}

fn run_sweep_width(cfg: &RunConfig, dir: &Path) -> Result<Value> {
    let ds = build_dataset(cfg)?;
    let ctx = build_context(cfg, &ds)?;
    let sw = width_sweep(cfg, &ds, ctx)?;
    let mut w = csv::Writer::from_path(dir.join("sweep_width.csv"))?;
    w.write_record(["width", "seed", "w1_t_eval", "w1_init_gaussian"])?;
    for (i, &width) in sw.widths.iter().enumerate() {
        for (s, (a, b)) in sw.w1[i].iter().zip(&sw.w1_init[i]).enumerate() {
            w.write_record([
                width.to_string(),
                s.to_string(),
                format!("{a:e}"),
                format!("{b:e}"),
            ])?;
        }
    }
    w.flush()?;
    let xs: Vec<f64> = sw.widths.iter().map(|&m| m as f64).collect();
    Ok(json!({
        "config": { "widths": sw.widths, "t_eval": cfg.sweep.t_eval, "particles": cfg.mf.m },
        "seeds": cfg.sweep.seeds,
        "w1_medians": sw.medians,
        "w1_init_medians": sw.init_medians,
        "slopes": {
            "w1_vs_width": log_log_slope(&xs, &sw.medians),
            "w1_init_vs_width": log_log_slope(&xs, &sw.init_medians),
        },
    }))
}

fn run_sweep_kernel(cfg: &RunConfig, dir: &Path) -> Result<Value> {
    let ds = build_dataset(cfg)?;
    let t = kernel_mc_scaling(
        &ds.train_x,
        &cfg.sweep.m1_list,
        cfg.sweep.seeds,
        cfg.kernel.seed,
    )?;
    let mut w = csv::Writer::from_path(dir.join("kernel_mc.csv"))?;
    w.write_record(["m1", "median_spectral_error", "min", "max"])?;
    for (i, &m) in t.m1.iter().enumerate() {
        let lo = t.errors[i].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.errors[i].iter().copied().fold(0.0, f64::max);
        w.write_record([
            m.to_string(),
            format!("{:e}", t.medians[i]),
            format!("{lo:e}"),
            format!("{hi:e}"),
        ])?;
    }
    w.flush()?;
    Ok(json!({
        "config": { "m1_list": t.m1 },
        "seeds": cfg.sweep.seeds,
        "medians": t.medians,
        "slopes": { "log_error_vs_log_m1": t.slope },
    }))
}

fn run_noise(cfg: &RunConfig, dir: &Path) -> Result<Value> {
    let entries = noise_study(cfg)?;
    let mut w = csv::Writer::from_path(dir.join("noise_study.csv"))?;
    w.write_record([
        "sigma",
        "seed",
        "reached",
        "t",
        "loss",
        "omega",
        "test_loss",
        "gen_bound_rhs",
    ])?;
    for e in &entries {
        w.write_record([
            format!("{:e}", e.sigma),
            e.seed.to_string(),
            e.reached.to_string(),
            format!("{:e}", e.t),
            format!("{:e}", e.loss),
            format!("{:e}", e.omega),
            e.test_loss.map(|v| format!("{v:e}")).unwrap_or_default(),
            format!("{:e}", e.gen_bound),
        ])?;
    }
    w.flush()?;
    let per_sigma: Vec<Value> = cfg
        .sweep
        .noise_sigmas
        .iter()
        .map(|&s| {
            let sel: Vec<&NoiseEntry> = entries.iter().filter(|e| e.sigma == s).collect();
            let om: Vec<f64> = sel.iter().map(|e| e.omega).collect();
            let tl: Vec<f64> = sel.iter().filter_map(|e| e.test_loss).collect();
            let gb: Vec<f64> = sel.iter().map(|e| e.gen_bound).collect();
            json!({
                "sigma": s,
                "median_omega": median(&om),
                "median_test_loss": if tl.is_empty() { Value::Null } else { json!(median(&tl)) },
                "median_gen_bound": median(&gb),
                "all_reached": sel.iter().all(|e| e.reached),
            })
        })
        .collect();
    Ok(json!({
        "config": { "sigmas": cfg.sweep.noise_sigmas, "loss_threshold": cfg.sweep.loss_threshold },
        "seeds": cfg.sweep.seeds,
        "per_sigma": per_sigma,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn validate_flags_regime_mismatch() {
        let mut cfg = RunConfig::default();
        cfg.set("mf.regime", "gt_half").unwrap();
        let r = validate(&cfg).unwrap();
        assert!(r.failures.iter().any(|f| f.contains("mf.regime")));
    }

    #[test]
    fn validate_accepts_defaults() {
        let r = validate(&RunConfig::default()).unwrap();
        assert!(r.ok(), "{:?}", r.failures);
        assert!(r.lambda_min_g > 0.0);
        assert_eq!(r.n, 18);
    }

    #[test]
    fn simulate_zero_time_logs_once() {
        let cfg = RunConfig::default();
        let ds = build_dataset(&cfg).unwrap();
        let st = build_finite(&cfg, &ds, 8, 8, 0).unwrap();
        let mut r = FiniteRunner::new(st, &ds);
        let opts = RunOptions {
            total_time: 0.0,
            ..RunOptions::from_config(&cfg)
        };
        let log = simulate(&mut r, &opts).unwrap();
        assert_eq!(log.record.rows.len(), 1);
        assert_eq!(log.record.rows[0].omega, 0.0);
    }
}
