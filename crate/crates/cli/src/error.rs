use std::fmt;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Data = 3,
    Numeric = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { kind: ExitKind::Config, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self { kind: ExitKind::Data, message: msg.into() }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<glenet::Error> for CliError {
    fn from(e: glenet::Error) -> Self {
        use glenet::Error as E;
        let kind = match &e {
            E::Config(_) | E::UnsupportedMode(_) => ExitKind::Config,
            E::NumericFault { .. } => ExitKind::Numeric,
            E::Domain(_) | E::Structural(_) | E::DegenerateInput(_) | E::Parse { .. } | E::SchemaVersion { .. } | E::Io(_) => {
                ExitKind::Data
            }
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(format!("csv: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
