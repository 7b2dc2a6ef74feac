use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::llm::ProviderConfig;
use crate::postprocess::MAX_FEEDBACK_ROUNDS;
use crate::prompting::{PromptStyle, DEFAULT_CONTEXT_BUDGET};
use crate::retrieval::{EmbeddingsEndpoint, SelectionPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub skill_type: Option<String>,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    pub test: PathBuf,
    /// File of train ids (one per line) never used as demonstrations.
    #[serde(default)]
    pub exclude_ids: Option<PathBuf>,
    /// Conjunction words for the conjoined-span statistic; defaults by language.
    #[serde(default)]
    pub conjunctions: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub style: PromptStyle,
    pub dataset_specific: bool,
    pub templates_dir: Option<PathBuf>,
    pub context_budget: usize,
    pub max_feedback: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            style: PromptStyle::Extraction,
            dataset_specific: true,
            templates_dir: None,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            max_feedback: MAX_FEEDBACK_ROUNDS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsConfig {
    /// JSONL `{"id", "vector"}` keyed by split-qualified ids ("train-3").
    pub vectors: Option<PathBuf>,
    pub endpoint: Option<EmbeddingsEndpoint>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Http,
    Mock,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    /// Script for the mock provider.
    pub mock_script: Option<PathBuf>,
    /// Mock answers with the gold rendering of every test sentence.
    pub mock_oracle: bool,
    #[serde(flatten)]
    pub settings: ProviderConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output: PathBuf,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// Evaluate on a seeded random subset of this many test sentences.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub limit_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub selection: SelectionPolicy,
    #[serde(default)]
    pub embeddings: EmbeddingsConfig,
    #[serde(default)]
    pub provider: ProviderSection,
    pub run: RunConfig,
}

/// Parses the right-hand side of `--set key=value`: a TOML literal when it
/// parses as one, a bare string otherwise.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies a dotted `key=value` override to a parsed document.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), ExperimentError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ExperimentError::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ExperimentError::Config(format!("bad override key {key:?}")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ExperimentError::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl ExperimentConfig {
    /// Reads a config file, applies overrides, and makes every path
    /// absolute relative to the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ExperimentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, overrides).map_err(|e| match e {
            ExperimentError::Config(m) => ExperimentError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: ExperimentConfig =
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        let d = &mut cfg.dataset;
        resolve(base, &mut d.test);
        resolve_opt(base, &mut d.train);
        resolve_opt(base, &mut d.dev);
        resolve_opt(base, &mut d.exclude_ids);
        resolve_opt(base, &mut cfg.prompt.templates_dir);
        resolve_opt(base, &mut cfg.embeddings.vectors);
        resolve_opt(base, &mut cfg.provider.mock_script);
        resolve(base, &mut cfg.run.output);
        resolve_opt(base, &mut cfg.run.cache);
        Ok(cfg)
    }

    /// Checks cross-field rules. A non-zero temperature needs
    /// `allow_temperature`.
    pub fn validate(&self, allow_temperature: bool) -> Result<(), ExperimentError> {
        let cfg_err = |m: String| Err(ExperimentError::Config(m));
        let t = self.provider.settings.temperature;
        if !t.is_finite() || t < 0.0 {
            return cfg_err(format!("temperature {t} is not a valid value"));
        }
        if t != 0.0 && !allow_temperature {
            return cfg_err(format!("temperature is {t}; runs use 0 unless --allow-temperature is given"));
        }
        if self.selection.k > 0 && self.dataset.train.is_none() {
            return cfg_err("k > 0 needs dataset.train for demonstrations".into());
        }
        if self.provider.kind == ProviderKind::Mock && self.provider.mock_script.is_none() && !self.provider.mock_oracle
        {
            return cfg_err("mock provider needs provider.mock_script or provider.mock_oracle = true".into());
        }
        if self.provider.settings.max_parallel == 0 {
            return cfg_err("provider.max_parallel must be at least 1".into());
        }
        let mut files: Vec<(&str, &Path)> = vec![("dataset.test", &self.dataset.test)];
        for (name, p) in [
            ("dataset.train", &self.dataset.train),
            ("dataset.dev", &self.dataset.dev),
            ("dataset.exclude_ids", &self.dataset.exclude_ids),
            ("provider.mock_script", &self.provider.mock_script),
        ] {
            if let Some(p) = p {
                files.push((name, p));
            }
        }
        if self.embeddings.endpoint.is_none() {
            if let Some(v) = &self.embeddings.vectors {
                files.push(("embeddings.vectors", v));
            }
        }
        if let Some((name, p)) = files.into_iter().find(|(_, p)| !p.is_file()) {
            return cfg_err(format!("{name}: {} does not exist", p.display()));
        }
        if let Some(dir) = &self.prompt.templates_dir {
            if !dir.is_dir() {
                return cfg_err(format!("prompt.templates_dir: {} is not a directory", dir.display()));
            }
        }
        Ok(())
    }
}
