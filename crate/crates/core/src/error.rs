use thiserror::Error;

/// Errors produced by the fitting toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A simulated or model-predicted state became non-finite.
    #[error("state diverged (non-finite) at {context}")]
    Divergence { context: String },

    /// Fixed-point iteration inside the implicit midpoint step failed to
    /// reach the requested residual.
    #[error("implicit midpoint fixed-point iteration did not converge at step {step} (residual {residual:.3e} after {iters} iterations)")]
    FixedPointNonConvergence {
        step: usize,
        residual: f64,
        iters: usize,
    },

    /// Incompatible array dimensions.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Invalid argument or configuration value.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A coordinate row is constant, so percentage noise scaling is undefined.
    #[error("coordinate {coord} is constant; percent noise scale is undefined")]
    ConstantCoordinate { coord: usize },

    /// A metric's denominator vanished.
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    /// The objective was non-finite where a finite value is required.
    #[error("non-finite objective: {0}")]
    NonFiniteObjective(String),

    /// File I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Failure parsing a data, model, or config file.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
