use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("chain too short: {atoms} atoms, need at least 9 (3 residues)")]
    ChainTooShort { atoms: usize },

    #[error("atom count {atoms} is not a multiple of 3 (N, CA, C per residue)")]
    NotBackbone { atoms: usize },

    #[error("degenerate geometry at atom {atom}: {reason}")]
    DegenerateGeometry { atom: usize, reason: &'static str },

    #[error("non-finite value at atom {atom}")]
    NonFinite { atom: usize },

    #[error("invalid internal coordinates: {0}")]
    InvalidInternal(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("need at least {need} conformations, got {got}")]
    TooFewConformations { need: usize, got: usize },

    #[error(
        "sample covariance is singular: {samples} samples for {dof} degrees of freedom; \
         use the OAS estimator instead"
    )]
    SingularCovariance { samples: usize, dof: usize },

    #[error("cholesky factorization failed: {0}")]
    Factorization(String),

    #[error(
        "lambda solver did not converge after {iterations} iterations \
         (max relative residual {max_residual:.3e} at atom {worst_atom})"
    )]
    NotConverged {
        iterations: usize,
        max_residual: f64,
        worst_atom: usize,
        residuals: Vec<f64>,
    },

    #[error("histogram binning mismatch")]
    BinningMismatch,

    #[error("fluctuation profiles use different superposition modes")]
    ModeMismatch,

    #[error("pdb parse error at {path}:{line}: {message}")]
    PdbParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("model {model}, residue {residue}: {message}")]
    Backbone {
        model: usize,
        residue: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
