use std::fmt;
use std::path::Path;

/// Error reported as a single `error: <code>: <message>` line.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub usage: bool,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            usage: true,
        }
    }

    pub fn runtime(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            usage: false,
        }
    }

    pub fn input_not_found(path: &Path) -> Self {
        Self::usage("input-not-found", format!("{} does not exist", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        if self.usage {
            2
        } else {
            3
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let message = self.message.replace('\n', " ");
        write!(f, "error: {}: {}", self.code, message)
    }
}

impl From<tiledit_core::Error> for CliError {
    fn from(e: tiledit_core::Error) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
            usage: e.is_usage(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime("io-error", e.to_string())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        Self::usage("bad-image", e.to_string())
    }
}
