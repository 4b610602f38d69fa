use std::fmt;

use smoothgauge::error::Error as CoreError;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 2,
    Data = 3,
    Convergence = 4,
    Numerical = 5,
}

/// A command failure tagged with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure {
            kind: ExitKind::Usage,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Failure {
            kind: ExitKind::Data,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn convergence(msg: impl fmt::Display) -> Self {
        Failure {
            kind: ExitKind::Convergence,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    /// Library error raised while reading an input file: anything other than a
    /// numerical failure counts as bad data.
    pub fn from_input(e: CoreError) -> Self {
        if e.is_numerical() {
            e.into()
        } else {
            Failure {
                kind: ExitKind::Data,
                error: e.into(),
            }
        }
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let kind = if e.is_numerical() {
            ExitKind::Numerical
        } else {
            match e {
                CoreError::Input(_) => ExitKind::Usage,
                _ => ExitKind::Data,
            }
        };
        Failure { kind, error: e.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            kind: ExitKind::Data,
            error: e.into(),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure {
            kind: ExitKind::Data,
            error: e.into(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure {
            kind: ExitKind::Data,
            error: e.into(),
        }
    }
}
