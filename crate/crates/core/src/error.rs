use crate::tensor::Shape;

/// Errors raised by tensor, layer, model and training operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("invalid shape {0:?}: every extent must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength {
        len: usize,
        shape: Shape,
        expected: usize,
    },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("{op}: expected {expected} channels, got {actual}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{op}: time length {time} is too short (need at least {min})")]
    TooShort {
        op: &'static str,
        time: usize,
        min: usize,
    },
    #[error("batch norm in training mode needs at least 2 rows per batch, got {0}")]
    BatchTooSmall(usize),
    #[error("batch norm running statistics are uninitialized; train or initialize them first")]
    RunningStatsUninitialized,
    #[error("residual block cannot shrink channels from {input} to {output}")]
    ChannelShrink { input: usize, output: usize },
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training split is empty")]
    EmptySplit,
    #[error(transparent)]
    Wav(#[from] crate::audio::wav::WavError),
    #[error(transparent)]
    Checkpoint(#[from] crate::train::checkpoint::CheckpointError),
    #[error("audio: {0}")]
    Audio(String),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
