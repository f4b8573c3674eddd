use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlamError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("singular geometry: {0}")]
    Singularity(&'static str),

    #[error("singular matrix (det = {det:e})")]
    Singular { det: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("all rule firing strengths vanished (inputs outside membership support)")]
    DegenerateActivation,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T, E = SlamError> = std::result::Result<T, E>;
