use std::path::{Path, PathBuf};

use craft_core::config::ConfigError;
use craft_core::corpus_io::CorpusError;
use craft_core::eval::EvalError;
use craft_core::gen::endpoint::EndpointError;
use craft_core::gen::GenError;
use craft_core::mixer::MixError;
use craft_core::pipeline::PipelineError;
use serde::Serialize;

/// Failure reported as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl CliError {
    pub fn new(error: &'static str, message: impl Into<String>, path: Option<&Path>) -> Self {
        CliError {
            error,
            message: message.into(),
            path: path.map(Path::to_path_buf),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()), Some(path))
    }

    pub fn report(&self) {
        log::error!("{}", self.message);
        eprintln!("{}", serde_json::to_string(self).expect("error serializes"));
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match e {
            ConfigError::Lexicon { .. } => "lexicon",
            _ => "config",
        };
        CliError::new(kind, e.to_string(), e.path())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::new("io", e.to_string(), Some(e.path()))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let kind = match e {
            PipelineError::Source { .. } => "source",
            PipelineError::Config(_) => "config",
            _ => "extract",
        };
        CliError::new(kind, e.to_string(), e.path())
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        match &e {
            GenError::Probe { .. } => CliError::new("endpoint", e.to_string(), None),
            GenError::Input(c) | GenError::Output(c) => CliError::new("io", e.to_string(), Some(c.path())),
        }
    }
}

impl From<EndpointError> for CliError {
    fn from(e: EndpointError) -> Self {
        CliError::new("endpoint", e.to_string(), None)
    }
}

impl From<MixError> for CliError {
    fn from(e: MixError) -> Self {
        let kind = match e {
            MixError::Short { .. } => "short_pool",
            MixError::Schema { .. } => "schema",
            MixError::Spec(_) => "config",
            MixError::Io(_) => "io",
        };
        CliError::new(kind, e.to_string(), e.path())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let kind = match e {
            EvalError::Probe(_) => "endpoint",
            EvalError::Dataset { .. } => "schema",
            EvalError::Io(_) => "io",
            _ => "eval",
        };
        CliError::new(kind, e.to_string(), e.path())
    }
}
