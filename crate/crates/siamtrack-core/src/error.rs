use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the tracking engine.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes are inconsistent for the requested operation.
    Shape { op: &'static str, detail: String },
    /// A configuration value or argument failed validation.
    Invalid { what: &'static str, detail: String },
    /// A backbone description file failed to parse.
    Parse { line: usize, detail: String },
    /// A data file (checkpoint, PPM, annotation) is malformed.
    Format { path: String, detail: String },
    /// An underlying I/O failure, annotated with the path involved.
    Io { path: String, source: std::io::Error },
    /// A numerical quantity became NaN or infinite.
    NonFinite { context: String },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "{op}: {detail}"),
            Error::Invalid { what, detail } => write!(f, "invalid {what}: {detail}"),
            Error::Parse { line, detail } => write!(f, "parse error at line {line}: {detail}"),
            Error::Format { path, detail } => write!(f, "{path}: {detail}"),
            Error::Io { path, source } => write!(f, "{path}: {source}"),
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
