use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use genz_core::corpus::SplitSpec;
use genz_core::discovery::DiscoveryConfig;
use genz_core::oracle::LlmOracleConfig;
use genz_core::statmodel::{MlpConfig, ModelKind};
use genz_core::Metric;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    BinaryToy,
    Hedonic,
    ColdstartEmbed,
    ZeroShotBaseline,
    ColdstartSim,
}

impl Experiment {
    /// Experiments driven by expand-contract cycles (and therefore resumable per cycle).
    pub fn is_cyclic(self) -> bool {
        matches!(self, Experiment::BinaryToy | Experiment::Hedonic | Experiment::ColdstartEmbed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Items "0".."count-1" with their own values as targets.
    Integers { count: usize },
    /// One number per line; the line is both item text and target.
    Lines { path: PathBuf },
    ItemsJson {
        path: PathBuf,
        #[serde(default)]
        targets: Option<PathBuf>,
    },
    /// `user,item,rating` triplets; `titles` maps item id to display text.
    Ratings {
        path: PathBuf,
        #[serde(default)]
        titles: Option<PathBuf>,
    },
    SyntheticRatings {
        users: usize,
        items: usize,
        rank: usize,
        density: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DataSource {
    fn paths(&self) -> Vec<&Path> {
        match self {
            DataSource::Integers { .. } | DataSource::SyntheticRatings { .. } => vec![],
            DataSource::Lines { path } => vec![path],
            DataSource::ItemsJson { path, targets } | DataSource::Ratings { path, titles: targets } => {
                std::iter::once(path.as_path()).chain(targets.as_deref()).collect()
            }
        }
    }

    fn is_ratings(&self) -> bool {
        matches!(self, DataSource::Ratings { .. } | DataSource::SyntheticRatings { .. })
    }

    fn is_integer_items(&self) -> bool {
        matches!(self, DataSource::Integers { .. } | DataSource::Lines { .. })
    }

    /// Builds a source from `--data PATH --format FMT`.
    pub fn from_flag(path: PathBuf, format: &str) -> Result<Self, CliError> {
        match format {
            "items_json" => Ok(DataSource::ItemsJson { path, targets: None }),
            "lines" => Ok(DataSource::Lines { path }),
            "ratings_matrix" => Ok(DataSource::Ratings { path, titles: None }),
            other => Err(CliError::Config(vec![format!(
                "unknown data format `{other}` (expected items_json, lines or ratings_matrix)"
            )])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleBackend {
    Synthetic,
    Remote,
    Replay,
}

impl std::str::FromStr for OracleBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "remote" => Ok(Self::Remote),
            "replay" => Ok(Self::Replay),
            other => Err(format!("unknown oracle backend `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub backend: OracleBackend,
    /// Recorded to (remote) or replayed from (replay).
    pub transcript: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    pub templates: Option<PathBuf>,
    pub timeout_secs: u64,
    pub extract_model: String,
    pub mine_model: String,
    pub temperature: f64,
    pub chunk_size: usize,
    pub max_in_flight: usize,
    pub max_attempts: usize,
    pub backoff_ms: u64,
}

impl OracleConfig {
    pub fn llm(&self) -> LlmOracleConfig {
        LlmOracleConfig {
            extract_model: self.extract_model.clone(),
            mine_model: self.mine_model.clone(),
            temperature: self.temperature,
            chunk_size: self.chunk_size,
            max_in_flight: self.max_in_flight,
            max_attempts: self.max_attempts,
            backoff_ms: self.backoff_ms,
        }
    }
}

impl Default for OracleConfig {
    fn default() -> Self {
        let llm = LlmOracleConfig::default();
        Self {
            backend: OracleBackend::Synthetic,
            transcript: None,
            templates: None,
            timeout_secs: 120,
            extract_model: llm.extract_model,
            mine_model: llm.mine_model,
            temperature: llm.temperature,
            chunk_size: llm.chunk_size,
            max_in_flight: llm.max_in_flight,
            max_attempts: llm.max_attempts,
            backoff_ms: llm.backoff_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub k: usize,
    pub alpha: f64,
    /// Keep only the most-rated items.
    pub top_items: Option<usize>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            k: genz_core::coldstart::DEFAULT_EMBEDDING_DIM,
            alpha: 0.5,
            top_items: Some(512),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotConfig {
    pub task: String,
    pub n_features: usize,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        Self {
            task: "Predict the target value of each item.".into(),
            n_features: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColdStartConfig {
    pub schedule: Vec<usize>,
    /// Items sampled for the simulation.
    pub n_items: usize,
    pub n_trials: usize,
    pub seed: u64,
    /// Sample from the `pool_size` most-rated items; all items when absent.
    pub pool_size: Option<usize>,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        Self {
            schedule: vec![0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 4000],
            n_items: 100,
            n_trials: 20,
            seed: 0,
            pool_size: Some(512),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub data: DataSource,
    /// Model the log of the targets; defaults to on for hedonic runs, off otherwise.
    #[serde(default)]
    pub log_target: Option<bool>,
    /// Sequential feature additions in the binary toy.
    #[serde(default = "default_toy_features")]
    pub toy_features: usize,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub discovery: DiscoveryConfig,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub zero_shot: ZeroShotConfig,
    #[serde(default)]
    pub cold_start: ColdStartConfig,
    /// A finished zero-shot run whose best test metric is drawn as the baseline.
    #[serde(default)]
    pub baseline_run: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_split() -> SplitSpec {
    SplitSpec::new(0.8, 0)
}

fn default_toy_features() -> usize {
    9
}

fn default_metric() -> Metric {
    Metric::MedianAbsError
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl RunConfig {
    pub fn from_value(value: Value) -> Result<Self, CliError> {
        serde_json::from_value(value).map_err(|e| CliError::Config(vec![format!("invalid config: {e}")]))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("cannot read config {}: {e}", path.display())]))?;
        let mut value: Value = serde_json::from_str(&raw)
            .map_err(|e| CliError::Config(vec![format!("config {} is not valid JSON: {e}", path.display())]))?;
        let errors: Vec<String> = overrides
            .iter()
            .filter_map(|o| apply_override(&mut value, o).err())
            .collect();
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }
        Self::from_value(value)
    }

    /// Makes every file path absolute against the current directory, so the echoed
    /// configuration works from anywhere.
    pub fn absolutize_paths(&mut self) -> Result<(), CliError> {
        fn fix(p: &mut PathBuf) -> Result<(), CliError> {
            *p = std::path::absolute(&*p).map_err(CliError::io(p.clone()))?;
            Ok(())
        }
        match &mut self.data {
            DataSource::Lines { path } => fix(path)?,
            DataSource::ItemsJson { path, targets: extra } | DataSource::Ratings { path, titles: extra } => {
                fix(path)?;
                if let Some(p) = extra {
                    fix(p)?;
                }
            }
            DataSource::Integers { .. } | DataSource::SyntheticRatings { .. } => {}
        }
        for p in [&mut self.oracle.transcript, &mut self.oracle.templates, &mut self.baseline_run]
            .into_iter()
            .flatten()
        {
            fix(p)?;
        }
        fix(&mut self.output_dir)
    }

    pub fn log_target(&self) -> bool {
        self.log_target.unwrap_or(self.experiment == Experiment::Hedonic)
    }

    /// Every problem with the configuration, checked before any work starts.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.experiment.is_cyclic() {
            errors.extend(self.discovery.validate().into_iter().map(|e| format!("discovery: {e}")));
        }
        for p in self.data.paths() {
            if !p.exists() {
                errors.push(format!("data file {} does not exist", p.display()));
            }
        }
        if let Some(dir) = &self.oracle.templates {
            if !dir.is_dir() {
                errors.push(format!("templates directory {} does not exist", dir.display()));
            }
        }
        let uses_oracle = self.experiment != Experiment::ColdstartSim;
        match self.oracle.backend {
            OracleBackend::Replay if uses_oracle => match &self.oracle.transcript {
                None => errors.push("replay oracle needs oracle.transcript".into()),
                Some(p) if !p.exists() => errors.push(format!("transcript {} does not exist", p.display())),
                _ => {}
            },
            OracleBackend::Synthetic if uses_oracle && !self.data.is_integer_items() => {
                errors.push("the synthetic oracle only understands integer items (integers or lines data)".into())
            }
            _ => {}
        }
        if self.experiment == Experiment::ZeroShotBaseline && self.oracle.backend == OracleBackend::Synthetic {
            errors.push("zero_shot_baseline needs a remote or replay oracle".into());
        }
        if self.oracle.chunk_size == 0 || self.oracle.max_attempts == 0 || self.oracle.max_in_flight == 0 {
            errors.push("oracle chunk_size, max_attempts and max_in_flight must be at least 1".into());
        }

        let expected_metric = match self.experiment {
            Experiment::BinaryToy | Experiment::Hedonic => Some(Metric::MedianAbsError),
            Experiment::ColdstartEmbed => Some(Metric::CosineSimilarity),
            Experiment::ZeroShotBaseline => Some(if self.data.is_ratings() {
                Metric::CosineSimilarity
            } else {
                Metric::MedianAbsError
            }),
            Experiment::ColdstartSim => None,
        };
        if let Some(m) = expected_metric {
            if m != self.metric {
                errors.push(format!(
                    "metric {} does not fit experiment {} (expected {})",
                    metric_name(self.metric),
                    experiment_name(self.experiment),
                    metric_name(m)
                ));
            }
        }
        let data_ok = match self.experiment {
            Experiment::BinaryToy => self.data.is_integer_items(),
            Experiment::Hedonic => matches!(self.data, DataSource::ItemsJson { .. }),
            Experiment::ColdstartEmbed | Experiment::ColdstartSim => self.data.is_ratings(),
            Experiment::ZeroShotBaseline => !self.data.is_integer_items(),
        };
        if !data_ok {
            errors.push(format!(
                "data source does not fit experiment {}",
                experiment_name(self.experiment)
            ));
        }
        if self.experiment == Experiment::Hedonic && !self.log_target() {
            errors.push("hedonic runs model log targets; log_target cannot be false".into());
        }
        if self.log_target() && self.data.is_ratings() {
            errors.push("log_target does not apply to rating embeddings".into());
        }
        if self.experiment == Experiment::BinaryToy && self.toy_features == 0 {
            errors.push("toy_features must be at least 1".into());
        }
        if self.experiment != Experiment::BinaryToy && self.experiment != Experiment::ColdstartSim {
            if let Err(e) = self.split.train_size(2) {
                errors.push(format!("split: {e}"));
            }
        }
        if self.data.is_ratings() {
            if self.embedding.k == 0 {
                errors.push("embedding.k must be at least 1".into());
            }
            if !(0.0..=1.0).contains(&self.embedding.alpha) {
                errors.push("embedding.alpha must lie in [0, 1]".into());
            }
        }
        if self.experiment == Experiment::ZeroShotBaseline && self.zero_shot.n_features == 0 {
            errors.push("zero_shot.n_features must be at least 1".into());
        }
        if self.experiment == Experiment::ColdstartSim {
            let cs = &self.cold_start;
            if cs.schedule.is_empty() || cs.schedule.windows(2).any(|w| w[0] >= w[1]) {
                errors.push("cold_start.schedule must be non-empty and strictly increasing".into());
            }
            if cs.n_items == 0 || cs.n_trials == 0 {
                errors.push("cold_start.n_items and cold_start.n_trials must be at least 1".into());
            }
        }
        if let DataSource::SyntheticRatings { users, items, rank, density, .. } = &self.data {
            if *users == 0 || *items == 0 || *rank == 0 || !(*density > 0.0 && *density <= 1.0) {
                errors.push("synthetic ratings need users, items, rank >= 1 and density in (0, 1]".into());
            }
        }
        if let Some(dir) = &self.baseline_run {
            if !dir.join("summary.json").exists() {
                errors.push(format!("baseline run {} has no summary.json", dir.display()));
            }
        }
        errors
    }
}

pub fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::MedianAbsError => "median_abs_error",
        Metric::CosineSimilarity => "cosine_similarity",
    }
}

pub fn experiment_name(e: Experiment) -> &'static str {
    match e {
        Experiment::BinaryToy => "binary_toy",
        Experiment::Hedonic => "hedonic",
        Experiment::ColdstartEmbed => "coldstart_embed",
        Experiment::ZeroShotBaseline => "zero_shot_baseline",
        Experiment::ColdstartSim => "coldstart_sim",
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and kept as a string
/// otherwise; intermediate objects are created as needed.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override `{assignment}` has an empty key"));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let Value::Object(map) = node else {
            return Err(format!("override `{assignment}`: `{key}` is inside a non-object"));
        };
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let Value::Object(map) = node else {
        return Err(format!("override `{assignment}`: parent of the last key is not an object"));
    };
    map.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn toy() -> Value {
        json!({"experiment": "binary_toy", "data": {"source": "integers", "count": 512}})
    }

    #[test]
    fn overrides_parse_json_and_fall_back_to_strings() {
        let mut v = toy();
        apply_override(&mut v, "discovery.k_add=1").unwrap();
        apply_override(&mut v, "oracle.backend=replay").unwrap();
        apply_override(&mut v, "output_dir=out/x").unwrap();
        assert_eq!(v["discovery"]["k_add"], json!(1));
        assert_eq!(v["oracle"]["backend"], json!("replay"));
        assert_eq!(v["output_dir"], json!("out/x"));
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "output_dir.x=1").is_err());
    }

    #[test]
    fn defaults_validate_for_the_toy() {
        let cfg = RunConfig::from_value(toy()).unwrap();
        assert_eq!(cfg.model, ModelKind::LinearExact);
        assert!(cfg.validate().is_empty(), "{:?}", cfg.validate());
    }

    #[test]
    fn all_problems_are_listed() {
        let mut v = toy();
        apply_override(&mut v, "metric=cosine_similarity").unwrap();
        apply_override(&mut v, "discovery.n_e=0").unwrap();
        apply_override(&mut v, "oracle.backend=replay").unwrap();
        let errs = RunConfig::from_value(v).unwrap().validate();
        assert_eq!(errs.len(), 3, "{errs:?}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = toy();
        apply_override(&mut v, "discovery.k_addd=1").unwrap();
        assert!(RunConfig::from_value(v).is_err());
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::from_value(toy()).unwrap();
        let again = RunConfig::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
