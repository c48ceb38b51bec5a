use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Param(String),
    #[error("encoding overflow: {0}")]
    EncodingOverflow(String),
    #[error("level error: {0}")]
    Level(String),
    #[error("scale mismatch: {0} vs {1} bits")]
    Scale(f64, f64),
    #[error("missing rotation key for step {0}")]
    MissingKey(i64),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("share algebra error: {0}")]
    ShareAlgebra(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("mask mode refused: {0}")]
    MaskMode(String),
    #[error("classification error: unknown operator `{0}`")]
    UnknownOp(String),
    #[error("planning error: {0}")]
    Planning(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("{context}: {inner}")]
    Context { context: String, inner: alloc::boxed::Box<Error> },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context { context: context.into(), inner: alloc::boxed::Box::new(self) }
    }
}
