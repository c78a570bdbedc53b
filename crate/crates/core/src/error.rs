use thiserror::Error;

/// Errors produced by the ntkrisk library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two paired objects disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A text table could not be parsed; locations are 1-based.
    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    /// A parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A configuration is internally inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The kernel carries no usable signal (e.g. all columns monomorphic).
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    /// An input row has zero norm, so the arc-cosine angle is undefined.
    #[error("undefined angle: input row {row} has zero norm")]
    UndefinedAngle { row: usize },

    /// The MINQUE trace system is singular.
    #[error("ill-posed variance-component system: {0}; kernels may be collinear with each other or the identity")]
    IllPosed(String),

    /// A design matrix is rank-deficient.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// A numeric operation failed (singular system, non-finite values, divergence).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A metric is undefined on the given inputs (e.g. zero-variance correlation).
    #[error("undefined metric: {0}")]
    ZeroVariance(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (configs, parameters, files),
    /// as opposed to numeric failures during computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Parse { .. }
                | Error::Parameter(_)
                | Error::Config(_)
                | Error::RankDeficient(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
