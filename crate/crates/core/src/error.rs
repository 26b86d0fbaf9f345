use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("segment too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no active speech in segment")]
    NoActiveSpeech,

    #[error("noise too short: {available} samples available, {needed} needed")]
    NoiseTooShort { available: usize, needed: usize },

    #[error("unsupported state pair: total sample weight is zero")]
    UnsupportedStatePair,

    #[error("{components} components requested but only {samples} effective samples")]
    TooFewSamples { components: usize, samples: usize },

    #[error("{frames} frames cannot train {states} states")]
    TooFewFrames { frames: usize, states: usize },

    #[error("feature space mismatch: expected {expected}, got {got}")]
    SpaceMismatch { expected: String, got: String },

    #[error("degenerate expansion point: log argument clamped at filter {0}")]
    DegenerateExpansion(usize),

    #[error("empty observation sequence")]
    EmptyObservation,

    #[error("no reachable joint state")]
    Unreachable,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("index ({0}, {1}) out of range")]
    IndexOutOfRange(usize, usize),

    #[error("every cell of the grid is unsupported")]
    AllCellsUnsupported,

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported schema version {found} (this build reads {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::Numerical(_) | Error::DegenerateExpansion(_) | Error::Unreachable | Error::AllCellsUnsupported => {
                ErrorClass::Numerical
            }
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
