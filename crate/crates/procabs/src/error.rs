use thiserror::Error;

use crate::blockworld::Orientation;
use crate::dsl::FragmentId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{orientation} block at column {x} does not fit a grid of width {width}")]
    OutOfBounds {
        x: i64,
        orientation: Orientation,
        width: usize,
    },
    #[error("{orientation} block at column {x} would rest at row {y}, exceeding grid height {height}")]
    TooTall {
        x: usize,
        y: usize,
        orientation: Orientation,
        height: usize,
    },
    #[error("blocks overlap at cell ({x}, {y})")]
    Overlap { x: usize, y: usize },
    #[error("scene is not constructible: {0}")]
    NotConstructible(String),
    #[error("hand moved to column {hand}, outside 0..{width}")]
    HandOutOfBounds { hand: i64, width: usize },
    #[error("unresolved chunk reference chunk{0}")]
    UnresolvedChunk(FragmentId),
    #[error("cyclic chunk reference through chunk{0}")]
    Cycle(FragmentId),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error("utterance has {words} words but program has {steps} steps")]
    Misaligned { words: usize, steps: usize },
    #[error("no unbound meaning left for word {0:?}")]
    NoUnboundMeaning(String),
    #[error("hypothesis space too large to enumerate ({0} words)")]
    HypothesisSpaceTooLarge(usize),
    #[error("distribution cannot be normalized: {0}")]
    Unnormalizable(String),
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by the filesystem rather than by inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
