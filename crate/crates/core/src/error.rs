use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Every failure mode of the toolkit. CLI commands map these onto exit
/// code 2 (user/input errors) or 1 (internal errors).
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("invalid utf-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("target vocab size {0} is below the 257-token floor (1 special + 256 byte tokens)")]
    VocabTooSmall(usize),
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    InvalidTokenId { id: u32, vocab: usize },
    #[error("incompatible alphabet: {0}")]
    IncompatibleAlphabet(String),
    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("focus_lite initialization requires an auxiliary embedding table")]
    MissingAuxEmbedding,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("token {0:?} has no constituent tokens under the base tokenizer")]
    EmptyConstituents(String),
    #[error("batch contains an empty sequence")]
    EmptySequence,
    #[error("step {step} out of range for a schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("choice {index} is empty (zero bytes)")]
    EmptyChoice { index: usize },
    #[error("candidate/reference count mismatch: {candidates} vs {references}")]
    LengthMismatch {
        candidates: usize,
        references: usize,
    },
    #[error("no candidates to score")]
    EmptyCandidateSet,
    #[error("non-positive duration: {0}")]
    NonPositiveDuration(f64),
    #[error("no generated tokens")]
    EmptyGeneration,
    #[error("reports share no metric names")]
    NoSharedMetrics,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable tag, used in the CLI's JSON error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::FileNotFound(_) => "FileNotFound",
            Error::MalformedRecord { .. } => "MalformedRecord",
            Error::InvalidUtf8 { .. } => "InvalidUtf8",
            Error::VocabTooSmall(_) => "VocabTooSmall",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::InvalidTokenId { .. } => "InvalidTokenId",
            Error::IncompatibleAlphabet(_) => "IncompatibleAlphabet",
            Error::BadMagic { .. } => "BadMagic",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::MissingAuxEmbedding => "MissingAuxEmbedding",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::EmptyConstituents(_) => "EmptyConstituents",
            Error::EmptySequence => "EmptySequence",
            Error::StepOutOfRange { .. } => "StepOutOfRange",
            Error::InvalidFraction(_) => "InvalidFraction",
            Error::EmptyChoice { .. } => "EmptyChoice",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyCandidateSet => "EmptyCandidateSet",
            Error::NonPositiveDuration(_) => "NonPositiveDuration",
            Error::EmptyGeneration => "EmptyGeneration",
            Error::NoSharedMetrics => "NoSharedMetrics",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "Io",
        }
    }

    /// True when the error is attributable to user input (bad files, bad
    /// flags, incompatible artifacts) rather than an internal failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

/// Open-a-file helper that turns NotFound into the dedicated variant.
pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            Error::FileNotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })
}
