//! Exponential decay-rate fits of loss curves.

/// Least-squares fit of `ln L = c - rate * t` on the decaying part of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `None` when the curve never leaves its initial plateau or the window
    /// holds fewer than three points.
    pub fitted_rate: Option<f64>,
    pub r_squared: f64,
    /// Inclusive index range of the fit window.
    pub window: Option<(usize, usize)>,
    /// `(2/n^2) min_t lambda_min(K_W,t)` over the logged snapshots.
    pub envelope_rate: Option<f64>,
}

impl RateReport {
    pub fn undefined(&self) -> bool {
        self.fitted_rate.is_none()
    }
}

/// The window opens at the first point below `0.9 L_0` and closes at the
/// first point at or below `max(1e-12, 1e-6 L_0)`, or at the end of the run.
pub fn fit_window(losses: &[f64]) -> Option<(usize, usize)> {
    let l0 = *losses.first()?;
    let start = losses.iter().position(|&l| l < 0.9 * l0)?;
    let floor = (1e-6 * l0).max(1e-12);
    let end = losses[start..]
        .iter()
        .position(|&l| l <= floor)
        .map_or(losses.len() - 1, |p| start + p);
    (end >= start + 2).then_some((start, end))
}

pub fn fit_rate(
    times: &[f64],
    losses: &[f64],
    lambda_min_kw: Option<&[f64]>,
    n: usize,
) -> RateReport {
    let envelope_rate = lambda_min_kw
        .filter(|l| !l.is_empty())
        .map(|l| 2.0 / (n as f64).powi(2) * l.iter().copied().fold(f64::INFINITY, f64::min));
    let undefined = RateReport {
        fitted_rate: None,
        r_squared: f64::NAN,
        window: None,
        envelope_rate,
    };
    let Some((s, e)) = fit_window(losses) else {
        return undefined;
    };
    let pts: Vec<(f64, f64)> = (s..=e)
        .filter(|&i| losses[i] > 0.0)
        .map(|i| (times[i], losses[i].ln()))
        .collect();
    if pts.len() < 3 {
        return undefined;
    }
    let m = pts.len() as f64;
    let tx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ty = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tx) * (p.1 - ty)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ty).powi(2)).sum();
    if sxx == 0.0 {
        return undefined;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    RateReport {
        fitted_rate: Some(-slope),
        r_squared,
        window: Some((s, e)),
        envelope_rate,
    }
}

/// Least-squares slope of `ln y` against `ln x` over the pairs with both
/// coordinates positive. `NaN` with fewer than two such pairs.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}
