use std::path::PathBuf;

/// Errors produced anywhere in the enhancement pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal of {len} samples is shorter than one frame ({frame} samples)")]
    SignalTooShort { len: usize, frame: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("sample rate {found} Hz is not supported (expected {expected} Hz)")]
    SampleRate { found: u32, expected: u32 },

    #[error("singular beamformer system at block {block}, bin {bin}")]
    SingularBeamformer { block: usize, bin: usize },

    #[error("ill-conditioned constraint set at bin {bin} (condition number {cond:.3e})")]
    IllConditioned { bin: usize, cond: f64 },

    #[error("field of view has zero angular measure ({start} deg to {end} deg)")]
    EmptyFov { start: f64, end: f64 },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("reference signal has zero energy")]
    ZeroEnergy,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("stale activation cache: {0}")]
    StaleCache(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("weights container: {0}")]
    Container(String),

    #[error("scene: {0}")]
    Scene(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
