use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected} but got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("maxpool1d: time length {time} is not divisible by pool size {pool}")]
    PoolLength { time: usize, pool: usize },
    #[error("batchnorm1d: train mode needs at least 2 values per channel, got {population}")]
    BatchPopulation { population: usize },
    #[error("{op}: target {value} is not in {{0, 1}}")]
    InvalidTarget { op: &'static str, value: f64 },
    #[error("{op}: label {label} out of range for {classes} classes")]
    LabelRange {
        op: &'static str,
        label: usize,
        classes: usize,
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("cannot parse scale name {0:?}; expected \"m^n\" such as \"3^9\"")]
    ScaleName(String),
    #[error("input length {m}^({n}+1) overflows")]
    Overflow { m: usize, n: usize },
    #[error("segment length mismatch: model expects {expected} samples, got {actual}")]
    SegmentLength { expected: usize, actual: usize },
    #[error("level {level} is invalid for a model with {blocks} hidden blocks")]
    InvalidLevel { level: i32, blocks: usize },

    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint: unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint: file truncated ({0})")]
    Truncated(String),
    #[error("checkpoint: malformed header: {0}")]
    MalformedHeader(String),

    #[error("wav: malformed RIFF/WAVE data: {0}")]
    MalformedWav(String),
    #[error("wav: unsupported format: {0}")]
    UnsupportedWav(String),
    #[error("audio clip {0:?} is empty")]
    EmptyClip(String),

    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("{op}: length mismatch ({left} vs {right})")]
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("roc_auc undefined: labels contain a single class")]
    UndefinedAuc,
    #[error("no evaluable tags: every tag has a single class")]
    NoEvaluableTags,
    #[error("missing feature block for scale {scale} level {level}")]
    MissingBlock { scale: String, level: i32 },
    #[error("run with seed {seed} failed: {source}")]
    RunFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest: {0}")]
    Manifest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("feature file: {0}")]
    FeatureFile(String),
    #[error("split {0:?} is empty")]
    EmptySplit(String),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("missing checkpoint for scale {0}")]
    MissingCheckpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::RunFailed { .. })
    }
}
