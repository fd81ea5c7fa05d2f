use std::fmt;

use serde::Serialize;
use serde_json::{json, Value};

/// Machine-readable failure printed to stderr as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub code: String,
    pub module: String,
    pub message: String,
    pub context: Value,
}

impl CliError {
    pub fn new(module: &str, code: &str, message: impl Into<String>, context: Value) -> Self {
        CliError {
            code: code.to_string(),
            module: module.to_string(),
            message: message.into(),
            context,
        }
    }

    pub fn config(message: impl Into<String>, context: Value) -> Self {
        CliError::new("cli", "ConfigError", message, context)
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError::new("cli", "StorageIo", err.to_string(), json!({ "path": path.display().to_string() }))
    }

    /// Best-effort conversion of any error chain into the JSON schema.
    pub fn from_anyhow(err: &anyhow::Error) -> Self {
        match err.downcast_ref::<CliError>() {
            Some(e) => e.clone(),
            None => CliError::new("cli", "Internal", format!("{err:#}"), json!({})),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}: {}", self.module, self.code, self.message)
    }
}

impl std::error::Error for CliError {}

/// Maps library errors to [`CliError`] with their module and code.
pub trait ModuleError<T> {
    fn module(self, module: &str, context: Value) -> Result<T, CliError>;
}

macro_rules! module_error {
    ($($ty:ty),* $(,)?) => {$(
        impl<T> ModuleError<T> for Result<T, $ty> {
            fn module(self, module: &str, context: Value) -> Result<T, CliError> {
                self.map_err(|e| CliError::new(module, e.code(), e.to_string(), context))
            }
        }
    )*};
}

module_error!(
    cpegraph::feed::FeedError,
    cpegraph::inconsistency::InconsistencyError,
    cpegraph::extraction::ExtractionError,
    cpegraph::postprocess::PostprocessError,
    cpegraph::graph::GraphError,
    cpegraph::filter::FilterError,
    cpegraph::eval::EvalError,
);
