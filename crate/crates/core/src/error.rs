use thiserror::Error;

/// Coarse classification used to pick CLI exit codes and FFI status values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad model files, malformed tensors, unreadable inputs.
    Input,
    /// The op cannot be mapped onto the configured device (tiling, opcode
    /// support).
    Planning,
    /// Everything else: internal invariant violations, stream faults, io.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("model: {0}")]
    Model(String),

    #[error("node '{node}': {reason}")]
    Shape { node: String, reason: String },

    #[error(
        "insufficient sram for '{op}': needs {needed} bytes at the smallest tile, budget {budget}"
    )]
    InsufficientSram {
        op: String,
        needed: u64,
        budget: u64,
    },

    #[error("codegen: {0}")]
    Codegen(String),

    #[error("command stream: {0}")]
    Stream(String),

    #[error("simulator: {0}")]
    Sim(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Model(_) | Error::Shape { .. } => {
                ErrorClass::Input
            }
            Error::InsufficientSram { .. } | Error::Codegen(_) => ErrorClass::Planning,
            Error::Stream(_) | Error::Sim(_) => ErrorClass::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
