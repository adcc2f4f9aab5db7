use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("angle out of range: azimuth {az_deg:.6} deg, elevation {el_deg:.6} deg")]
    AngleOutOfRange { az_deg: f64, el_deg: f64 },

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("{what} ({total}) is not divisible by {divisor}")]
    Divisibility {
        what: &'static str,
        total: usize,
        divisor: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("degenerate phase profile: effective gain vector has zero norm")]
    DegenerateProfile,

    #[error("Fisher information is singular (condition number {condition:.3e}, smallest normalized eigenvalue {min_eigenvalue:.3e})")]
    SingularFisher {
        condition: f64,
        min_eigenvalue: f64,
    },

    #[error("{available} noise-only statistics cannot resolve p_fa = {p_fa} (need at least {required})")]
    InsufficientSamples {
        available: usize,
        p_fa: f64,
        required: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
