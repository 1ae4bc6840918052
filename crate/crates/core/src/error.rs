use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument: bad dimensions, indices out of range, illegal scalars.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {violation:e})")]
    Symmetry { violation: f64 },

    /// A regularizer parameter puts a pole inside the Laplacian spectrum.
    #[error("singular regularizer: {0}")]
    Singularity(String),

    #[error("ill-conditioned system ({context}); condition estimate {condition:e}")]
    Conditioning { context: String, condition: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("homophily ratio undefined: graph has no edges")]
    EdgelessGraph,

    #[error("eigendecomposition did not converge")]
    NoConvergence,

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing dataset file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("optimization failed: all {restarts} restarts diverged")]
    OptimizationFailed {
        restarts: usize,
        traces: Vec<Vec<(usize, f64)>>,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures that come from linear algebra rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Conditioning { .. }
                | Error::Invariant(_)
                | Error::NoConvergence
                | Error::Singularity(_)
                | Error::OptimizationFailed { .. }
        )
    }

    /// Process exit code used by the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Parse { .. }
            | Error::MissingFile(_)
            | Error::Io { .. }
            | Error::Generation(_)
            | Error::EdgelessGraph
            | Error::Symmetry { .. } => 3,
            _ => 4,
        }
    }
}
