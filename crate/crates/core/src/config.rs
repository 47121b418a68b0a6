//! TOML configuration shared by every subcommand.
//!
//! Resolution order is flags, then file values, then built-in defaults.
//! Relative input paths are taken from the config file's directory and
//! relative output paths from `output_root`. Unknown keys are fatal unless
//! lax parsing is requested.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::{TokenCounterSpec, DEFAULT_MAX_TOKENS};
use crate::corpus_io::CorpusSource;
use crate::eval::template::DEFAULT_TEMPLATE_COUNT;
use crate::gen::endpoint::EndpointConfig;
use crate::gen::record::ValidationPolicy;
use crate::gen::GenMode;
use crate::lexicon::{load_lexicon, LexiconError, LexiconOptions, LoadedLexicon, DEFAULT_MIN_KEYWORDS};
use crate::matcher::DEFAULT_MIN_DISTINCT;
use crate::mixer::{MixSpec, DEFAULT_CULTURAL_COUNT, DEFAULT_SWEEP_STEP};
use crate::pipeline::{DedupMode, ExtractionConfig};

const LOG_LEVELS: [&str; 6] = ["off", "error", "warn", "info", "debug", "trace"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("unknown config key {key}")]
    UnknownKey { key: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{field}: {} does not exist", path.display())]
    MissingPath { field: String, path: PathBuf },
    #[error("override {key}: {message}")]
    BadOverride { key: String, message: String },
    #[error("{field}: {source}")]
    Lexicon {
        field: String,
        #[source]
        source: LexiconError,
    },
}

impl ConfigError {
    pub fn path(&self) -> Option<&Path> {
        match self {
            ConfigError::Read { path, .. } | ConfigError::Parse { path, .. } | ConfigError::MissingPath { path, .. } => {
                Some(path)
            }
            ConfigError::Lexicon {
                source: LexiconError::Read { path, .. },
                ..
            } => Some(path),
            _ => None,
        }
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub path: PathBuf,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractSection {
    pub sources: Vec<CorpusSource>,
    pub lexicons: Vec<LexiconEntry>,
    pub max_tokens: usize,
    pub min_distinct: usize,
    pub min_lexicon_size: usize,
    /// Load lexicons below `min_lexicon_size` with a warning.
    pub allow_short_lexicons: bool,
    /// Unset means one worker per available core.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub dedup: DedupMode,
    pub output_dir: PathBuf,
    pub target_counts: BTreeMap<String, usize>,
    pub stable_order: bool,
    pub token_counter: TokenCounterSpec,
    pub queue_capacity: usize,
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection {
            sources: Vec::new(),
            lexicons: Vec::new(),
            max_tokens: DEFAULT_MAX_TOKENS,
            min_distinct: DEFAULT_MIN_DISTINCT,
            min_lexicon_size: DEFAULT_MIN_KEYWORDS,
            allow_short_lexicons: false,
            workers: None,
            dedup: DedupMode::ExactHash,
            output_dir: PathBuf::from("extract"),
            target_counts: BTreeMap::new(),
            stable_order: false,
            token_counter: TokenCounterSpec::default(),
            queue_capacity: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSection {
    pub candidates: Vec<PathBuf>,
    pub output: PathBuf,
    pub mode: GenMode,
    pub stable_order: bool,
    pub validation: ValidationPolicy,
    /// Names substituted into the question prompt, keyed by region id.
    pub region_names: BTreeMap<String, String>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            candidates: Vec::new(),
            output: PathBuf::from("instructions.jsonl"),
            mode: GenMode::Both,
            stable_order: false,
            validation: ValidationPolicy::default(),
            region_names: BTreeMap::new(),
        }
    }
}

/// The answer endpoints fall back to the question endpoint when unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointsSection {
    pub question: EndpointConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_free_answer: Option<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub step: usize,
    pub max: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            step: DEFAULT_SWEEP_STEP,
            max: DEFAULT_CULTURAL_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub dataset: PathBuf,
    /// Directory of `*.txt` templates; the shipped five when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    /// Dataset layout: "indexed" or "lettered".
    pub adapter: String,
    /// Falls back to `endpoints.question`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
    pub out: PathBuf,
    /// A pack with a different number of templates is reported with a warning.
    pub expected_templates: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            dataset: PathBuf::new(),
            templates: None,
            adapter: "indexed".into(),
            endpoint: None,
            out: PathBuf::from("eval-report.json"),
            expected_templates: DEFAULT_TEMPLATE_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub log_level: String,
    pub output_root: PathBuf,
    pub extract: ExtractSection,
    pub generate: GenerateSection,
    pub endpoints: EndpointsSection,
    pub mix: MixSpec,
    pub sweep: SweepSection,
    pub eval: EvalSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            log_level: "info".into(),
            output_root: PathBuf::from("."),
            extract: ExtractSection::default(),
            generate: GenerateSection::default(),
            endpoints: EndpointsSection::default(),
            mix: MixSpec::default(),
            sweep: SweepSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// A `section.key = value` assignment applied on top of the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigOverride {
    pub key: String,
    pub value: toml::Value,
}

impl ConfigOverride {
    pub fn new(key: impl Into<String>, value: impl Into<toml::Value>) -> Self {
        ConfigOverride {
            key: key.into(),
            value: value.into(),
        }
    }

    pub fn path(key: impl Into<String>, path: &Path) -> Self {
        Self::new(key, path.to_string_lossy().into_owned())
    }

    pub fn paths(key: impl Into<String>, paths: &[PathBuf]) -> Self {
        let list: Vec<toml::Value> = paths.iter().map(|p| p.to_string_lossy().into_owned().into()).collect();
        Self::new(key, list)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    /// Unknown keys are reported as warnings.
    Lax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: AppConfig,
    /// Unknown keys skipped under lax parsing.
    pub warnings: Vec<String>,
}

/// Reads and resolves a config file. With no file, defaults are resolved
/// against the current directory.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[ConfigOverride],
    strictness: Strictness,
) -> Result<LoadedConfig, ConfigError> {
    let (text, base, label) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, base, p.to_path_buf())
        }
        None => (String::new(), PathBuf::new(), PathBuf::from("<defaults>")),
    };
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    parse_config(&text, &label, &base, overrides, strictness)
}

/// Pure core of [`load_config`]: the result depends only on the arguments.
pub fn parse_config(
    text: &str,
    label: &Path,
    base_dir: &Path,
    overrides: &[ConfigOverride],
    strictness: Strictness,
) -> Result<LoadedConfig, ConfigError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: label.to_path_buf(),
        message: e.to_string(),
    })?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut ignored = Vec::new();
    let mut track = serde_path_to_error::Track::new();
    let tracked = serde_path_to_error::Deserializer::new(table, &mut track);
    let parsed: Result<AppConfig, _> = serde_ignored::deserialize(tracked, |p| ignored.push(p.to_string()));
    let mut config = parsed.map_err(|e| invalid(track.path().to_string(), e.to_string()))?;
    if let (Strictness::Strict, Some(key)) = (strictness, ignored.first()) {
        return Err(ConfigError::UnknownKey { key: key.clone() });
    }
    // returned rather than logged: callers usually set up logging from this config
    let warnings: Vec<String> = ignored.into_iter().map(|k| format!("ignoring unknown config key {k}")).collect();
    config.resolve_paths(base_dir);
    config.validate()?;
    Ok(LoadedConfig { config, warnings })
}

fn apply_override(table: &mut toml::Table, o: &ConfigOverride) -> Result<(), ConfigError> {
    let bad = |message: &str| ConfigError::BadOverride {
        key: o.key.clone(),
        message: message.into(),
    };
    let mut parts: Vec<&str> = o.key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| bad("empty key"))?;
    let mut current = table;
    for part in parts {
        let entry = current.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| bad("parent is not a table"))?;
    }
    current.insert(last.to_string(), o.value.clone());
    Ok(())
}

fn under(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

impl AppConfig {
    fn resolve_paths(&mut self, base: &Path) {
        under(base, &mut self.output_root);
        for s in &mut self.extract.sources {
            under(base, &mut s.path);
        }
        for l in &mut self.extract.lexicons {
            under(base, &mut l.path);
        }
        if let TokenCounterSpec::ExternalVocab { vocab_path } = &mut self.extract.token_counter {
            under(base, vocab_path);
        }
        for c in &mut self.generate.candidates {
            under(base, c);
        }
        under(base, &mut self.mix.general_source);
        under(base, &mut self.mix.cultural_source);
        under(base, &mut self.eval.dataset);
        if let Some(t) = &mut self.eval.templates {
            under(base, t);
        }
        let root = self.output_root.clone();
        under(&root, &mut self.extract.output_dir);
        under(&root, &mut self.generate.output);
        under(&root, &mut self.mix.output);
        under(&root, &mut self.eval.out);
    }

    /// Invariant checks that need no filesystem access; every error names
    /// the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !LOG_LEVELS.contains(&self.log_level.as_str()) {
            return Err(invalid("log_level", format!("expected one of {}", LOG_LEVELS.join(", "))));
        }
        let x = &self.extract;
        if x.max_tokens == 0 {
            return Err(invalid("extract.max_tokens", "must be at least 1"));
        }
        if x.workers == Some(0) {
            return Err(invalid("extract.workers", "must be at least 1"));
        }
        if x.queue_capacity == 0 {
            return Err(invalid("extract.queue_capacity", "must be at least 1"));
        }
        let mut regions = std::collections::BTreeSet::new();
        for (i, l) in x.lexicons.iter().enumerate() {
            if l.region.trim().is_empty() {
                return Err(invalid(format!("extract.lexicons[{i}].region"), "must not be empty"));
            }
            if !regions.insert(l.region.as_str()) {
                return Err(invalid(format!("extract.lexicons[{i}].region"), format!("{} appears twice", l.region)));
            }
        }
        let endpoints = [
            ("endpoints.question", Some(&self.endpoints.question)),
            ("endpoints.answer", self.endpoints.answer.as_ref()),
            ("endpoints.context_free_answer", self.endpoints.context_free_answer.as_ref()),
            ("eval.endpoint", self.eval.endpoint.as_ref()),
        ];
        for (field, ep) in endpoints {
            if let Some(ep) = ep {
                ep.validate().map_err(|e| invalid(field, e.to_string()))?;
            }
        }
        if self.sweep.step == 0 {
            return Err(invalid("sweep.step", "must be at least 1"));
        }
        if crate::eval::item::adapter_by_name(&self.eval.adapter).is_none() {
            return Err(invalid("eval.adapter", "expected \"indexed\" or \"lettered\""));
        }
        if self.eval.expected_templates == 0 {
            return Err(invalid("eval.expected_templates", "must be at least 1"));
        }
        Ok(())
    }

    /// Checks that the inputs of one stage (`extract`, `generate`, ...) exist.
    /// Later stages read what earlier ones write, so this runs per command
    /// rather than at load time.
    pub fn check_inputs(&self, section: &str) -> Result<(), ConfigError> {
        let prefix = format!("{section}.");
        for (field, path) in self.input_paths() {
            if field.starts_with(&prefix) && !path.exists() {
                return Err(ConfigError::MissingPath { field, path: path.to_path_buf() });
            }
        }
        Ok(())
    }

    /// Every input path that is set, labelled with its field.
    pub fn input_paths(&self) -> Vec<(String, &Path)> {
        let mut out: Vec<(String, &Path)> = Vec::new();
        for (i, s) in self.extract.sources.iter().enumerate() {
            out.push((format!("extract.sources[{i}].path"), &s.path));
        }
        for (i, l) in self.extract.lexicons.iter().enumerate() {
            out.push((format!("extract.lexicons[{i}].path"), &l.path));
        }
        if let TokenCounterSpec::ExternalVocab { vocab_path } = &self.extract.token_counter {
            out.push(("extract.token_counter.vocab_path".into(), vocab_path));
        }
        for (i, c) in self.generate.candidates.iter().enumerate() {
            out.push((format!("generate.candidates[{i}]"), c));
        }
        out.push(("mix.general_source".into(), &self.mix.general_source));
        out.push(("mix.cultural_source".into(), &self.mix.cultural_source));
        out.push(("eval.dataset".into(), &self.eval.dataset));
        if let Some(t) = &self.eval.templates {
            out.push(("eval.templates".into(), t));
        }
        out.retain(|(_, p)| !p.as_os_str().is_empty());
        out
    }

    /// `sha256:<hex>` of the resolved config as JSON.
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    /// Builds the extraction run, loading every lexicon.
    pub fn extraction(&self) -> Result<(ExtractionConfig, Vec<LoadedLexicon>), ConfigError> {
        let x = &self.extract;
        if x.sources.is_empty() {
            return Err(invalid("extract.sources", "no corpus sources configured"));
        }
        if x.lexicons.is_empty() {
            return Err(invalid("extract.lexicons", "no lexicons configured"));
        }
        let options = LexiconOptions {
            min_size: x.min_lexicon_size,
            allow_short: x.allow_short_lexicons,
        };
        let mut loaded = Vec::with_capacity(x.lexicons.len());
        for (i, entry) in x.lexicons.iter().enumerate() {
            let lexicon = load_lexicon(&entry.path, &entry.region, options).map_err(|source| ConfigError::Lexicon {
                field: format!("extract.lexicons[{i}]"),
                source,
            })?;
            loaded.push(lexicon);
        }
        let mut run = ExtractionConfig::new(
            x.sources.clone(),
            loaded.iter().map(|l| l.lexicon.clone()).collect(),
            x.output_dir.clone(),
        );
        run.max_tokens = x.max_tokens;
        run.min_distinct = x.min_distinct;
        run.workers = x
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        run.dedup = x.dedup;
        run.target_counts = x.target_counts.clone();
        run.stable_order = x.stable_order;
        run.token_counter = x.token_counter.clone();
        run.queue_capacity = x.queue_capacity;
        Ok((run, loaded))
    }

    pub fn answer_endpoint(&self) -> &EndpointConfig {
        self.endpoints.answer.as_ref().unwrap_or(&self.endpoints.question)
    }

    pub fn eval_endpoint(&self) -> &EndpointConfig {
        self.eval.endpoint.as_ref().unwrap_or(&self.endpoints.question)
    }
}

/// `sha256:<hex>` of a value's JSON serialization.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    format!("sha256:{:x}", Sha256::digest(&bytes))
}

/// Reads a TOML file holding a single table of `T`, applying overrides
/// first. Unknown keys are fatal under [`Strictness::Strict`].
pub fn load_toml<T: serde::de::DeserializeOwned>(
    path: &Path,
    overrides: &[ConfigOverride],
    strictness: Strictness,
) -> Result<(T, Vec<String>), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut ignored = Vec::new();
    let mut track = serde_path_to_error::Track::new();
    let tracked = serde_path_to_error::Deserializer::new(table, &mut track);
    let parsed: Result<T, _> = serde_ignored::deserialize(tracked, |p| ignored.push(p.to_string()));
    let value = parsed.map_err(|e| invalid(track.path().to_string(), e.to_string()))?;
    if let (Strictness::Strict, Some(key)) = (strictness, ignored.first()) {
        return Err(ConfigError::UnknownKey { key: key.clone() });
    }
    let warnings: Vec<String> = ignored.into_iter().map(|k| format!("ignoring unknown key {k}")).collect();
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok((value, warnings))
}

/// Loads a standalone endpoint file (a bare `EndpointConfig` table).
pub fn load_endpoint_config(path: &Path, strictness: Strictness) -> Result<EndpointConfig, ConfigError> {
    let (config, _) = load_toml::<EndpointConfig>(path, &[], strictness)?;
    config.validate().map_err(|e| invalid("endpoint", e.to_string()))?;
    Ok(config)
}

/// Loads a mix spec file. Relative paths are taken from the file's directory;
/// both pools must exist.
pub fn load_mix_spec(path: &Path, overrides: &[ConfigOverride], strictness: Strictness) -> Result<MixSpec, ConfigError> {
    let (mut spec, _) = load_toml::<MixSpec>(path, overrides, strictness)?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    for (field, p) in [
        ("general_source", &mut spec.general_source),
        ("cultural_source", &mut spec.cultural_source),
    ] {
        if p.as_os_str().is_empty() {
            return Err(invalid(field, "must be set"));
        }
        under(base, p);
        if !p.exists() {
            return Err(ConfigError::MissingPath {
                field: field.into(),
                path: p.clone(),
            });
        }
    }
    under(base, &mut spec.output);
    Ok(spec)
}
