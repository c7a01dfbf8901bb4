use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("message of {len} bytes exceeds the limit of {max} bytes")]
    OversizeMessage { len: u64, max: u64 },
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("listen address is {0} bytes, at most 253 allowed")]
    AddressTooLong(usize),
    #[error("invalid function id: {0}")]
    InvalidFunctionId(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
}

impl ProtocolError {
    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        ProtocolError::MalformedFrame(msg.into())
    }
}
