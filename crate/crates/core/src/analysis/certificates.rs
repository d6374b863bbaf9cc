//! Discrete checks of the Polyak-Lojasiewicz decay inequality
//! `dL/dt <= -(2/n^2) lambda_min(K_W) L` and of Oppenheim's determinant bound
//! `det(Q o G) >= prod_k Q_kk det(G)`.

use super::snapshot::KernelSnapshot;

/// Relative slack granted to the determinant comparison.
pub const OPPENHEIM_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PlReport {
    /// One entry per consecutive pair of log points.
    pub slacks: Vec<f64>,
    pub tolerance: f64,
}

impl PlReport {
    pub fn min_slack(&self) -> f64 {
        self.slacks.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn violations(&self) -> usize {
        self.slacks.iter().filter(|&&s| s < -self.tolerance).count()
    }

    pub fn ok(&self) -> bool {
        self.violations() == 0
    }
}

/// `slack_j = -(L_{j+1} - L_j)/(t_{j+1} - t_j) - (2/n^2) lambda_j L_j` for
/// each consecutive pair of log points. The tolerance is
/// `1e-6 L_0 + allowance`, where `allowance` accounts for time discretization.
pub fn check_pl(
    times: &[f64],
    losses: &[f64],
    lambda_min_kw: &[f64],
    n: usize,
    allowance: f64,
) -> PlReport {
    let len = times.len().min(losses.len()).min(lambda_min_kw.len());
    let c = 2.0 / (n as f64 * n as f64);
    let slacks = (0..len.saturating_sub(1))
        .map(|j| {
            let dt = times[j + 1] - times[j];
            let decay = -(losses[j + 1] - losses[j]) / dt;
            decay - c * lambda_min_kw[j] * losses[j]
        })
        .collect();
    let l0 = losses.first().copied().unwrap_or(0.0);
    PlReport {
        slacks,
        tolerance: 1e-6 * l0 + allowance.max(0.0),
    }
}

/// Discretization allowance from a control run at half the step size, logged
/// at the same times: twice the largest gap between matched slacks, the
/// Richardson estimate of the first-order error at the coarse step.
pub fn discretization_allowance(coarse: &[f64], fine: &[f64]) -> f64 {
    coarse
        .iter()
        .zip(fine)
        .map(|(c, f)| 2.0 * (c - f).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OppenheimCheck {
    pub det_kw: f64,
    pub lower_bound: f64,
    pub ok: bool,
}

/// Compares `det(K_W)` with `prod_k Q_kk det(G) (1 - 1e-8)` in log space so
/// that tiny determinants neither underflow nor lose relative precision.
pub fn check_oppenheim(snap: &KernelSnapshot) -> OppenheimCheck {
    let (sign, log_det) = snap.log_det_kw;
    let lower = snap.log_oppenheim_lower;
    let ok = if lower == f64::NEG_INFINITY || lower.is_nan() {
        // A zero lower bound only requires det(K_W) >= 0; a determinant that
        // is numerically zero with either sign qualifies.
        sign >= 0.0 || log_det < -700.0
    } else {
        sign > 0.0 && log_det >= lower + (1.0 - OPPENHEIM_REL_TOL).ln()
    };
    OppenheimCheck {
        det_kw: snap.det_kw(),
        lower_bound: snap.oppenheim_lower(),
        ok,
    }
}
