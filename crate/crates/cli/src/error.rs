use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("missing artifact {}: run `xband {producer}` first", path.display())]
    Missing { path: PathBuf, producer: &'static str },

    #[error("numeric failure: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::NonFinite(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

/// Subcommand that writes each artifact file.
pub fn producer_of(path: &std::path::Path) -> &'static str {
    match path.file_name().and_then(|n| n.to_str()).unwrap_or("") {
        "scenes.cuxd" => "gen",
        "simulated.cuxd" => "simulate",
        "dataset.cuxd" => "sample",
        "split.json" => "split",
        "model.cuxw" | "train_log.json" => "train",
        "predictions.cuxd" => "predict",
        "report.csv" | "report_idw.csv" | "summary.json" => "eval",
        _ => "all",
    }
}

impl From<xband_core::Error> for CliError {
    fn from(e: xband_core::Error) -> Self {
        match e {
            xband_core::Error::MissingArtifact { path } => {
                let producer = producer_of(&path);
                CliError::Missing { path, producer }
            }
            xband_core::Error::NonFinite(m) => CliError::NonFinite(m),
            other => CliError::Other(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.into())
    }
}
