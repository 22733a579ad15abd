use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system `{0}` (expected one of dr, ns, bg, sw, hc)")]
    UnknownSystem(String),

    #[error("split `{split}` has no sampling range for parameter `{param}`")]
    EmptyRange { split: String, param: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(
        "non-finite state while integrating env {env_id} ({params}) at substep {substep}"
    )]
    SolverBlowUp { env_id: u32, params: String, substep: usize },

    #[error("non-finite prediction at rollout step {step}")]
    RolloutBlowUp { step: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}; last good checkpoint: {last_good:?}")]
    NonFiniteLoss { epoch: usize, step: usize, last_good: Option<PathBuf> },

    #[error("unsupported schema version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("derivative ordering version mismatch: checkpoint has {found}, runtime expects {expected}")]
    OrderingVersion { found: u32, expected: u32 },

    #[error("degenerate regressor: {0}")]
    Degenerate(String),

    #[error("zero-norm target in nMSE")]
    ZeroNorm,

    #[error("empty band [{lo}, {hi}]")]
    EmptyBand { lo: usize, hi: usize },

    #[error("empty risk table")]
    EmptyRiskTable,

    #[error("epoch {epoch} outside schedule range [0, {total})")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("recipe stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Hdf5(#[from] hdf5::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
