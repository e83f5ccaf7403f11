use serde::Serialize;
use serde_json::Value;

/// Machine-readable failure: `{code, message, details}`.
#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub details: Value,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn new(code: impl Into<String>, message: impl Into<String>, exit_code: i32) -> Self {
        CliError { code: code.into(), message: message.into(), details: Value::Null, exit_code }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("UsageError", message, 2)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("ConfigError", message, 1)
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl From<edgewipe::Error> for CliError {
    fn from(e: edgewipe::Error) -> Self {
        let details = match &e {
            edgewipe::Error::JobFailed { job_id, .. } => serde_json::json!({ "job_id": job_id }),
            edgewipe::Error::UnreadableFile { path, .. } => serde_json::json!({ "path": path }),
            edgewipe::Error::OutOfBounds { row, col, rows, cols } => serde_json::json!({ "row": row, "col": col, "rows": rows, "cols": cols }),
            _ => Value::Null,
        };
        CliError::new(e.code(), e.to_string(), 1).with_details(details)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        edgewipe::Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        edgewipe::Error::Json(e).into()
    }
}
