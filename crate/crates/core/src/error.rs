use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: columns are zero or parallel")]
    DegenerateRotation,

    #[error("matrix is not a proper rotation (orthonormality error {0:.3e})")]
    NotARotation(f64),

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("keypoint {0} is inactive (too few effective views)")]
    InactiveKeypoint(usize),

    #[error("no keypoint is visible in enough views to constrain the poses")]
    NoConstraints,

    #[error("scene scale is zero: every camera sits at the origin")]
    ZeroScale,

    #[error("non-finite loss or gradient at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("degenerate point configuration for alignment: {0}")]
    DegenerateConfiguration(String),

    #[error("view count mismatch: {estimated} estimated vs {reference} reference")]
    MismatchedViews { estimated: usize, reference: usize },

    #[error("poses required")]
    PosesRequired,

    #[error("depths missing for visible observations; initialize them first")]
    MissingDepths,

    #[error("unsupported scene file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
