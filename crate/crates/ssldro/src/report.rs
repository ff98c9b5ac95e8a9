//! Machine-readable run reports.

use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Train/test quality of a model. Absent entries are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

/// One JSON object per command invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub args: Vec<String>,
    /// Every setting in effect, defaults included.
    pub config: Map<String, Value>,
    pub metrics: Metrics,
    /// Command-specific results and counters.
    pub diagnostics: Map<String, Value>,
    pub seed: Option<u64>,
    pub timing_seconds: f64,
}

impl RunReport {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        RunReport {
            command: command.to_string(),
            args,
            config: Map::new(),
            metrics: Metrics::default(),
            diagnostics: Map::new(),
            seed: None,
            timing_seconds: 0.0,
        }
    }

    pub fn config(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.config.insert(key.to_string(), value.into());
        self
    }

    pub fn diag(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.diagnostics.insert(key.to_string(), value.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes to `path`, or to stdout when `path` is `None`.
    pub fn emit(&self, path: Option<&Path>) -> CliResult<()> {
        let text = self.to_json();
        match path {
            Some(p) => std::fs::write(p, text + "\n").map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            }),
            None => {
                use std::io::Write;
                // A closed pipe (e.g. `| head`) is not an error worth reporting.
                match writeln!(std::io::stdout().lock(), "{text}") {
                    Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io {
                        path: "<stdout>".into(),
                        source: e,
                    }),
                    _ => Ok(()),
                }
            }
        }
    }
}
