use std::fmt;

/// A failed command, carrying its process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or mismatched inputs, or an error raised while
    /// processing them. Exit code 2.
    Input(anyhow::Error),
    /// A validation check ran and did not hold. Exit code 1.
    Validation(String),
    /// The algorithm could not meet its stopping condition. Exit code 3.
    Infeasible(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Input(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(e) => write!(f, "{e:#}"),
            Failure::Validation(msg) => write!(f, "validation failed: {msg}"),
            Failure::Infeasible(msg) => write!(f, "infeasible: {msg}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

/// Shorthand for a usage error.
pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Input(anyhow::anyhow!(msg.into()))
}

/// An error's message followed by its chain of sources.
pub fn describe(e: &(dyn std::error::Error + 'static)) -> String {
    let mut text = e.to_string();
    let mut cur = e.source();
    while let Some(inner) = cur {
        text.push_str(": ");
        text.push_str(&inner.to_string());
        cur = inner.source();
    }
    text
}
