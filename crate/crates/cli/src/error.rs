use std::fmt;
use std::io;
use std::path::Path;

/// A failed command. `Usage` covers bad configuration and arguments and
/// exits with status 2; everything else exits with 1.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Failed(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        CliError::Failed(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            CliError::Usage(m) | CliError::Failed(m) => m,
        };
        // diagnostics stay on one line
        f.write_str(&msg.replace('\n', " "))
    }
}

impl std::error::Error for CliError {}

impl From<falsify_core::Error> for CliError {
    fn from(e: falsify_core::Error) -> Self {
        use falsify_core::Error as E;
        match e {
            E::Config { .. } | E::BudgetExceeded { .. } | E::Dimension(_) | E::DegenerateRange(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
