//! Command-line front end: manifests in, compliance matrices and benchmark
//! tables out.

pub mod commands;
pub mod manifest;

use serde::Serialize;
use stiffid_core::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_BAND: i32 = 4;

/// Machine-readable error report written to stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub exit_code: i32,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
}

impl Failure {
    pub fn band(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_BAND,
            kind: "band",
            message: message.into(),
            experiment: None,
            path: None,
            line: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let experiment = e.experiment_index();
        let inner = match &e {
            Error::InExperiment { source, .. } => source.as_ref(),
            other => other,
        };
        let (path, line) = match inner {
            Error::Parse { path, line, .. } => (Some(path.display().to_string()), Some(*line)),
            Error::Io { path, .. } => (Some(path.display().to_string()), None),
            _ => (None, None),
        };
        let numerical = e.is_numerical();
        Self {
            exit_code: if numerical { EXIT_NUMERICAL } else { EXIT_INPUT },
            kind: if numerical { "numerical" } else { "input" },
            message: e.to_string(),
            experiment,
            path,
            line,
        }
    }
}
