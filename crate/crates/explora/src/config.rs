//! Run configuration: one TOML file, overridable from the command line.
//!
//! Every random choice flows through a named seed here; nothing is seeded
//! from the clock, so a config fully determines a simulator run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Metric;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: PathBuf,
    pub embeddings: PathBuf,
    /// Optional second store whose validation namespace holds test-query
    /// vectors (needed by the knn/mmr generators).
    pub query_embeddings: Option<PathBuf>,
    /// Prompt template file; the built-in template applies when absent.
    pub prompt_spec: Option<PathBuf>,
    pub metric: Metric,
    pub output_dir: PathBuf,
    pub cache: PathBuf,
    /// m: validation examples used for loss measurement.
    pub validation_size: usize,
    /// Sample the validation split instead of taking the first m records.
    pub val_seed: Option<u64>,
    pub universe: UniverseSection,
    pub bandit: BanditSection,
    pub decode: DecodeSection,
    pub seeds: Seeds,
    pub backend: BackendConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: PathBuf::from("train.jsonl"),
            validation: PathBuf::from("validation.jsonl"),
            test: PathBuf::from("test.jsonl"),
            embeddings: PathBuf::from("embeddings.bin"),
            query_embeddings: None,
            prompt_spec: None,
            metric: Metric::ExactMatch,
            output_dir: PathBuf::from("out"),
            cache: PathBuf::from("out/cache.jsonl"),
            validation_size: 20,
            val_seed: None,
            universe: UniverseSection::default(),
            bandit: BanditSection::default(),
            decode: DecodeSection::default(),
            seeds: Seeds::default(),
            backend: BackendConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseSection {
    /// Cluster count; subsets draw one exemplar per cluster, so this is
    /// also the subset size.
    pub clusters: usize,
    pub size: usize,
}

impl Default for UniverseSection {
    fn default() -> Self {
        UniverseSection {
            clusters: 5,
            size: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditSection {
    pub low_loss_size: usize,
    pub negatives_per_round: usize,
    pub max_rounds: usize,
    pub stop_tolerance: f64,
    pub ridge: f64,
    pub cumulative_fit: bool,
}

impl Default for BanditSection {
    fn default() -> Self {
        let d = crate::bandit::BanditConfig::default();
        BanditSection {
            low_loss_size: d.low_loss_size,
            negatives_per_round: d.negatives_per_round,
            max_rounds: d.max_rounds,
            stop_tolerance: d.stop_tolerance,
            ridge: d.ridge,
            cumulative_fit: d.cumulative_fit,
        }
    }
}

impl BanditSection {
    pub fn to_bandit_config(&self, seed: u64) -> crate::bandit::BanditConfig {
        crate::bandit::BanditConfig {
            low_loss_size: self.low_loss_size,
            negatives_per_round: self.negatives_per_round,
            max_rounds: self.max_rounds,
            seed,
            stop_tolerance: self.stop_tolerance,
            ridge: self.ridge,
            cumulative_fit: self.cumulative_fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub temperature: f64,
    pub max_tokens: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub answer_pattern: String,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = crate::llm::DecodeParams::default();
        DecodeSection {
            temperature: d.temperature,
            max_tokens: d.max_tokens,
            frequency_penalty: d.frequency_penalty,
            presence_penalty: d.presence_penalty,
            answer_pattern: crate::llm::DEFAULT_ANSWER_PATTERN.to_string(),
        }
    }
}

impl DecodeSection {
    pub fn to_decode_params(&self, num_samples: u32) -> crate::llm::DecodeParams {
        crate::llm::DecodeParams {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            frequency_penalty: self.frequency_penalty,
            presence_penalty: self.presence_penalty,
            num_samples,
        }
    }

    pub fn compile_pattern(&self) -> Result<regex::Regex> {
        regex::Regex::new(&self.answer_pattern)
            .map_err(|e| Error::validation(format!("answer_pattern does not compile: {e}")))
    }
}

/// Named seeds; every random decision in a run traces back to one of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub cluster: u64,
    pub universe: u64,
    pub bandit: u64,
    pub simulator: u64,
    pub folds: u64,
    /// Seed for the static random-exemplar baseline.
    pub baseline: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            cluster: 1,
            universe: 2,
            bandit: 3,
            simulator: 4,
            folds: 5,
            baseline: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Simulator,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulatorKind {
    Linear,
    Echo,
    Never,
}

/// Which backend answers prompts, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Simulator flavor (linear scorer, always-correct echo, never-correct).
    pub mode: SimulatorKind,
    pub quantile: f64,
    /// Simulator seed override; `seeds.simulator` applies when absent.
    pub seed: Option<u64>,
    pub url: Option<String>,
    pub model: Option<String>,
    pub name: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Simulator,
            mode: SimulatorKind::Linear,
            quantile: 0.5,
            seed: None,
            url: None,
            model: None,
            name: None,
        }
    }
}

impl BackendConfig {
    /// Parse a compact descriptor like `simulator:seed=12;mode=echo` or
    /// `http:url=https://host/v1/chat/completions;model=m`. Fields are
    /// `;`-separated so URLs keep their colons.
    pub fn parse_descriptor(descriptor: &str) -> Result<Self> {
        let (kind, rest) = descriptor
            .split_once(':')
            .map(|(k, r)| (k, Some(r)))
            .unwrap_or((descriptor, None));
        let mut config = BackendConfig::default();
        config.kind = match kind {
            "simulator" => BackendKind::Simulator,
            "http" => BackendKind::Http,
            other => {
                return Err(Error::Usage(format!(
                    "unknown backend kind {other:?} (expected simulator or http)"
                )))
            }
        };
        let Some(rest) = rest else {
            return Ok(config);
        };
        for field in rest.split(';').filter(|f| !f.is_empty()) {
            let (key, value) = field.split_once('=').ok_or_else(|| {
                Error::Usage(format!("backend descriptor field {field:?} is not key=value"))
            })?;
            match key {
                "mode" => {
                    config.mode = match value {
                        "linear" => SimulatorKind::Linear,
                        "echo" => SimulatorKind::Echo,
                        "never" => SimulatorKind::Never,
                        other => {
                            return Err(Error::Usage(format!("unknown simulator mode {other:?}")))
                        }
                    }
                }
                "quantile" => {
                    config.quantile = value
                        .parse()
                        .map_err(|e| Error::Usage(format!("bad quantile: {e}")))?
                }
                "seed" => {
                    config.seed = Some(
                        value
                            .parse()
                            .map_err(|e| Error::Usage(format!("bad seed: {e}")))?,
                    )
                }
                "url" => config.url = Some(value.to_string()),
                "model" => config.model = Some(value.to_string()),
                "name" => config.name = Some(value.to_string()),
                other => {
                    return Err(Error::Usage(format!(
                        "unknown backend descriptor key {other:?}"
                    )))
                }
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Samples drawn for the +sc variants.
    pub sc_samples: u32,
    pub knn_count: usize,
    pub mmr_lambda: f64,
    pub folds: usize,
    pub max_inflight: usize,
    /// Prompt with every selected subset instead of the single best one.
    pub use_all_subsets: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            sc_samples: 5,
            knn_count: 5,
            mmr_lambda: 0.5,
            folds: 10,
            max_inflight: 4,
            use_all_subsets: false,
        }
    }
}

fn parse_toml_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    if let Ok(table) = wrapped.parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(root: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Usage(format!("bad override path {path:?}")));
    }
    let mut table = root;
    for segment in &segments[..segments.len() - 1] {
        table = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Usage(format!("override path {path:?} crosses a non-table value"))
            })?;
    }
    table.insert(
        segments.last().unwrap().to_string(),
        parse_toml_scalar(raw),
    );
    Ok(())
}

impl RunConfig {
    /// Load a config file and apply `key.path=value` overrides. Relative
    /// paths are resolved against the config file's directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::data(path, 0, format!("bad toml: {e}")))?;
        for entry in overrides {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                Error::Usage(format!("override {entry:?} is not key.path=value"))
            })?;
            apply_override(&mut table, key.trim(), value.trim())?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::data(path, 0, format!("bad config: {e}")))?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.validation);
        fix(&mut self.test);
        fix(&mut self.embeddings);
        if let Some(q) = self.query_embeddings.as_mut() {
            fix(q);
        }
        if let Some(s) = self.prompt_spec.as_mut() {
            fix(s);
        }
        fix(&mut self.output_dir);
        fix(&mut self.cache);
    }

    pub fn load_prompt_spec(&self) -> Result<crate::llm::PromptSpec> {
        match &self.prompt_spec {
            Some(path) => crate::llm::PromptSpec::from_file(path),
            None => Ok(crate::llm::PromptSpec::default()),
        }
    }

    pub fn simulator_seed(&self) -> u64 {
        self.backend.seed.unwrap_or(self.seeds.simulator)
    }
}
