use nalgebra::{DMatrix, DVector};

use crate::activations::Activation;
use crate::finite_model::TrainingState;
use crate::linalg::{self, sorted_sum};
use crate::mf_model::MfState;

/// Kernel matrices on the training set at one instant.
#[derive(Debug, Clone)]
pub struct KernelSnapshot {
    pub t: f64,
    /// `(K_a)_kl = mean_i sigma(h_i(x_k)) sigma(h_i(x_l))`.
    pub k_a: DMatrix<f64>,
    /// `Q_kl = mean_i a_i^2 sigma'(h_i(x_k)) sigma'(h_i(x_l))`.
    pub q: DMatrix<f64>,
    /// `Q o G`.
    pub k_w: DMatrix<f64>,
    /// `beta_a K_a + K_W`.
    pub k: DMatrix<f64>,
    pub lambda_min_k: f64,
    pub lambda_min_kw: f64,
    /// `(sign, ln|det K_W|)`.
    pub log_det_kw: (f64, f64),
    /// `sum_k ln Q_kk + ln det G`; `-inf` when a factor vanishes.
    pub log_oppenheim_lower: f64,
}

impl KernelSnapshot {
    pub fn det_kw(&self) -> f64 {
        self.log_det_kw.0 * self.log_det_kw.1.exp()
    }

    pub fn oppenheim_lower(&self) -> f64 {
        self.log_oppenheim_lower.exp()
    }
}

/// Builds a snapshot from output weights `a` (length `P`), pre-activations
/// `h` (`P x n`) and the first-layer Gram matrix. Averages over neurons use
/// order-independent summation, so relabelling neurons does not change a bit.
pub fn kernel_snapshot(
    t: f64,
    a: &DVector<f64>,
    h: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    beta_a: f64,
    sigma: Activation,
) -> KernelSnapshot {
    let (p, n) = h.shape();
    let s = h.map(|u| sigma.value(u));
    let d = DMatrix::from_fn(p, n, |i, k| a[i] * sigma.derivative(h[(i, k)]));
    let mean_outer = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, n);
        let mut buf = vec![0.0; p];
        for k in 0..n {
            for l in k..n {
                for i in 0..p {
                    buf[i] = m[(i, k)] * m[(i, l)];
                }
                let v = sorted_sum(&mut buf) / p as f64;
                out[(k, l)] = v;
                out[(l, k)] = v;
            }
        }
        out
    };
    let k_a = mean_outer(&s);
    let q = mean_outer(&d);
    snapshot_from_parts(t, k_a, q, gram, beta_a)
}

/// Assembles a snapshot from `K_a`, `Q` and the Gram matrix.
pub fn snapshot_from_parts(
    t: f64,
    k_a: DMatrix<f64>,
    q: DMatrix<f64>,
    gram: &DMatrix<f64>,
    beta_a: f64,
) -> KernelSnapshot {
    let n = q.nrows();
    let k_w = q.component_mul(gram);
    let k = &k_a * beta_a + &k_w;
    let log_det_kw = linalg::log_det(&k_w);
    let (sg, lg) = linalg::log_det(gram);
    let log_g = if sg > 0.0 { lg } else { f64::NEG_INFINITY };
    let log_q: f64 = (0..n).map(|k| q[(k, k)].ln()).sum();
    KernelSnapshot {
        t,
        lambda_min_k: linalg::lambda_min(&k),
        lambda_min_kw: linalg::lambda_min(&k_w),
        k_a,
        q,
        k_w,
        k,
        log_det_kw,
        log_oppenheim_lower: log_q + log_g,
    }
}

/// Snapshot of a finite-width state; the Gram matrix is the random-feature
/// kernel of its own first layer.
pub fn snapshot_finite(st: &TrainingState) -> KernelSnapshot {
    snapshot_finite_with_gram(st, &st.gram_m1())
}

pub fn snapshot_finite_with_gram(st: &TrainingState, gram: &DMatrix<f64>) -> KernelSnapshot {
    let a = &st.net.a;
    kernel_snapshot(st.time(), a, &st.h, gram, st.net.beta_a, st.net.sigma2)
}

pub fn snapshot_mf(st: &MfState) -> KernelSnapshot {
    let e = &st.ensemble;
    kernel_snapshot(
        st.time(),
        &e.a,
        &st.preact,
        e.ctx.gram(),
        e.beta_a,
        e.sigma2,
    )
}
