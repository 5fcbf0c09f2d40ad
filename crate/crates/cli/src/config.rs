//! Run configuration. Precedence: command-line flags, then the TOML file
//! given with `--config`, then built-in defaults. The effective configuration
//! is echoed into every report.

use std::path::{Path, PathBuf};

use funcsense_core::corpus::{ContextMode, DelimiterSet, Tokenizer};
use funcsense_core::evaluation::CvConfig;
use funcsense_core::linear_model::TrainConfig;
use funcsense_core::projection::PcaConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub target: String,
    pub delimiters: Vec<String>,
    pub tokenizer: Tokenizer,
    pub limit: Option<usize>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            target: "sich".into(),
            delimiters: DelimiterSet::default().iter().map(str::to_string).collect(),
            tokenizer: Tokenizer::Simple,
            limit: None,
        }
    }
}

impl CorpusConfig {
    pub fn delimiter_set(&self) -> Result<DelimiterSet, CliError> {
        Ok(DelimiterSet::new(self.delimiters.iter().cloned())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsConfig {
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    /// Stub only; the remote dimension comes from the service.
    pub dim: usize,
    pub seed: u64,
    pub mode: ContextMode,
    pub pooling: Option<String>,
    pub layer: Option<i64>,
    /// Request-level memo file reused across runs.
    pub memo: Option<PathBuf>,
}

impl Default for EmbeddingsConfig {
    fn default() -> Self {
        EmbeddingsConfig {
            provider: ProviderKind::Stub,
            endpoint: None,
            dim: funcsense_core::embeddings::DEFAULT_DIM,
            seed: 0,
            mode: ContextMode::Phrasal,
            pooling: None,
            layer: None,
            memo: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for CvSection {
    fn default() -> Self {
        let cv = CvConfig::default();
        CvSection {
            folds: cv.folds,
            seed: cv.seed,
            stratified: cv.stratified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
    pub annotator_a: String,
    pub annotator_b: String,
    /// Gold JSONL rewritten after every accepted label or adjudication.
    pub save: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            static_dir: None,
            annotator_a: "A".into(),
            annotator_b: "B".into(),
            save: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub embeddings: EmbeddingsConfig,
    pub train: TrainConfig,
    pub cv: CvSection,
    pub pca: PcaConfig,
    pub serve: ServeConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.serve.port == 0 {
            return Err("serve.port must be in 1..65535".into());
        }
        if self.corpus.target.trim().is_empty() {
            return Err("corpus.target is empty".into());
        }
        DelimiterSet::new(self.corpus.delimiters.iter().cloned()).map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.cv.folds < 2 {
            return Err("cv.folds must be at least 2".into());
        }
        Ok(())
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            folds: self.cv.folds,
            seed: self.cv.seed,
            stratified: self.cv.stratified,
            train: self.train,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Flag value if given, else the configured value; fails naming `flag` when
/// both are absent.
pub fn required(flag: Option<PathBuf>, slot: &mut Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        *slot = Some(p);
    }
    slot.clone()
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set paths.{name} in the config file)")))
}
