//! Trajectory complexity `omega_t = int_0^t (-dL/ds)^{1/2} ds` and the
//! a-posteriori generalization bound built on it.

use crate::activations::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ComplexityTrack {
    pub omega: f64,
    pub times: Vec<f64>,
    pub losses: Vec<f64>,
    pub omegas: Vec<f64>,
}

impl ComplexityTrack {
    pub fn new(t0: f64, l0: f64) -> Self {
        Self {
            omega: 0.0,
            times: vec![t0],
            losses: vec![l0],
            omegas: vec![0.0],
        }
    }

    /// Appends a loss observed at time `t`, advancing `omega` over the gap
    /// since the previous observation.
    pub fn observe(&mut self, t: f64, loss: f64) {
        if let (Some(&tp), Some(&lp)) = (self.times.last(), self.losses.last()) {
            self.omega = omega_update(self.omega, lp, loss, t - tp);
        }
        self.times.push(t);
        self.losses.push(loss);
        self.omegas.push(self.omega);
    }
}

/// `omega + sqrt(max(0, (L_prev - L_next)/dt)) dt`, a left-endpoint
/// quadrature of the integrand over one interval.
pub fn omega_update(omega: f64, l_prev: f64, l_next: f64, dt: f64) -> f64 {
    if dt <= 0.0 {
        return omega;
    }
    omega + ((l_prev - l_next) / dt).max(0.0).sqrt() * dt
}

/// Activation constants entering the bound, plus the unspecified prefactor
/// `C2` of the `beta_a > 0` correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub m_sigma: f64,
    pub l_sigma: f64,
    pub c2: f64,
}

impl BoundConstants {
    pub fn for_activation(sigma2: Activation) -> Self {
        Self {
            m_sigma: sigma2.bound(),
            l_sigma: sigma2.lipschitz(),
            c2: 1.0,
        }
    }

    /// `C1 = sqrt(2) M^3 + M^2 L`.
    pub fn c1(&self) -> f64 {
        let m = self.m_sigma;
        2f64.sqrt() * m.powi(3) + m * m * self.l_sigma
    }
}

/// `C2 omega ((a + 1/a) omega + beta_a omega^2 + beta_a^2 omega^3 / a)`.
pub fn movement_term(beta_a: f64, a_hat: f64, omega: f64, c2: f64) -> f64 {
    c2 * omega
        * ((a_hat + 1.0 / a_hat) * omega
            + beta_a * omega.powi(2)
            + beta_a.powi(2) * omega.powi(3) / a_hat)
}

/// Right-hand side of the population-risk bound for the truncated predictor,
/// holding with probability `1 - delta` over the sample:
/// `L + 4 C1 (a^2 + beta_a) omega / sqrt(n) + beta_a M(beta_a, a, omega) / sqrt(n)
///  + sqrt(ln(1/delta) / (2n))`.
pub fn gen_bound_rhs(
    loss: f64,
    omega: f64,
    n: usize,
    delta: f64,
    a_hat: f64,
    beta_a: f64,
    constants: BoundConstants,
) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    if n == 0 {
        return Err(Error::Config("bound needs n >= 1".into()));
    }
    let sn = (n as f64).sqrt();
    let mut rhs = loss + 4.0 * constants.c1() * (a_hat * a_hat + beta_a) * omega / sn;
    if beta_a > 0.0 {
        rhs += beta_a * movement_term(beta_a, a_hat, omega, constants.c2) / sn;
    }
    rhs += ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt();
    Ok(rhs)
}
