use std::fmt;

/// Error classes, each with its own exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, config file, scenario/prior/sampler block or output path.
    Config,
    /// Unreadable or invalid input data or draws.
    Data,
    /// Sampling failed.
    Sampler,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Sampler => 4,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Sampler => "sampler",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn sampler(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Sampler,
            message: message.into(),
        }
    }

    /// Wraps a library error under `kind`.
    pub fn wrap(kind: ErrorKind, err: cpjoint::Error) -> Self {
        Self {
            kind,
            message: err.to_string(),
        }
    }
}

/// Renders as a single line: `error[<code>]: <message>`.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat: Vec<&str> = self.message.split_whitespace().collect();
        write!(f, "error[{}]: {}", self.kind.code(), flat.join(" "))
    }
}

pub type CliResult<T> = Result<T, CliError>;
