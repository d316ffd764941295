use thiserror::Error;

/// Errors produced by the solvers and the run/sweep drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no stabilizing solution: (A, B) fails the PBH test at eigenvalue {re:.6} {im:+.6}i")]
    NoStabilizingSolution { re: f64, im: f64 },

    #[error("no stabilizing solution: {0}")]
    NotStabilizing(String),

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("trajectory diverged at node {node} (t = {time})")]
    Divergence { node: usize, time: f64 },

    #[error("RHC window {window} diverged: {source}")]
    WindowDivergence {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reference solution is horizon-sensitive: restriction changed by {change:.3e} in L2 (tolerance {tolerance:.1e})")]
    ReferenceUnstable { change: f64, tolerance: f64 },

    #[error("RHC window {window} did not converge (gradient norm {grad_norm:.3e}); {completed} windows completed")]
    PartialRhc {
        window: usize,
        grad_norm: f64,
        completed: usize,
        partial: Box<crate::rhc::RhcResult>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
