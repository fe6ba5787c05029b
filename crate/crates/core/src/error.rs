use alloc::string::String;

use thiserror::Error;

use crate::types::ModalityPair;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("synchronisation failed: {0}")]
    Sync(String),
    #[error("window is missing active modality {0}")]
    MissingModality(ModalityPair),
    #[error("operation requires {expected} fusion output")]
    WrongFusionKind { expected: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot build splits: {0}")]
    Split(String),
}

pub type Result<T> = core::result::Result<T, Error>;
