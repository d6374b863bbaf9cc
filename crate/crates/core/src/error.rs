use thiserror::Error;

/// Errors raised across the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite integrand value {value} at quadrature node {node} (z = {z})")]
    NumericalDomain { node: usize, z: f64, value: f64 },

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue} below -{tolerance}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("kernel inconsistency: conditional variance radicand {radicand} below -{tolerance}")]
    Inconsistent { radicand: f64, tolerance: f64 },

    #[error("training diverged at step {step} (max |residual| = {max_residual:e})")]
    Divergence {
        model: &'static str,
        step: usize,
        max_residual: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure originates from numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::NumericalDomain { .. }
                | Error::NotPsd { .. }
                | Error::Inconsistent { .. }
        )
    }

    /// Short name of the subsystem that raised the error, for user-facing
    /// messages.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Parse { .. } => "parser",
            Error::NumericalDomain { .. } => "activations",
            Error::NotPsd { .. } | Error::Inconsistent { .. } => "kernel",
            Error::Divergence { model, .. } => model,
            Error::Contract(_) => "analysis",
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
