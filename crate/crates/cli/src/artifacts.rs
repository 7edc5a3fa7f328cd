//! The output directory of a run.
//!
//! ```text
//! config.json            effective configuration
//! checkpoints/cycle_N.json
//! metrics.jsonl          one record per cycle (zero-shot: per pruning step)
//! events.jsonl           additions, rejections, prunes, cycle ends
//! bound_trace.jsonl      the bound after every EM iteration
//! features.json          final feature list
//! learning_curve.csv     plot-ready metrics, with the baseline when one is configured
//! summary.json           final metrics
//! timings.jsonl          wall time per cycle
//! ```
//!
//! Everything except `timings.jsonl` is a deterministic function of the configuration.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use genz_core::{FeatureDescriptor, ModelState, StopReason};

use crate::error::CliError;

pub const CONFIG: &str = "config.json";
pub const METRICS: &str = "metrics.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const BOUND_TRACE: &str = "bound_trace.jsonl";
pub const FEATURES: &str = "features.json";
pub const LEARNING_CURVE: &str = "learning_curve.csv";
pub const SUMMARY: &str = "summary.json";
pub const TIMINGS: &str = "timings.jsonl";
pub const COLD_START: &str = "cold_start.csv";
pub const ZERO_SHOT: &str = "zero_shot.json";
pub const CHECKPOINTS: &str = "checkpoints";

/// Appended per cycle and per zero-shot pruning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub cycle: usize,
    pub n_f: usize,
    pub train_metric: f64,
    pub test_metric: Option<f64>,
    #[serde(rename = "L")]
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub descriptor: FeatureDescriptor,
    pub error_rate: Option<f64>,
    /// Share of training items the oracle says the descriptor applies to.
    pub activation: Option<f64>,
}

impl FeatureRecord {
    pub fn from_state(state: &ModelState) -> Vec<FeatureRecord> {
        let fs = &state.features;
        (0..fs.len())
            .map(|i| FeatureRecord {
                descriptor: fs.descriptors()[i].clone(),
                error_rate: Some(fs.error_rates()[i]),
                activation: Some(fs.activation(i)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub metric: Option<String>,
    pub n_f: Option<usize>,
    pub cycles: Option<usize>,
    pub stop: Option<StopReason>,
    pub train_metric: Option<f64>,
    pub test_metric: Option<f64>,
    /// Zero-shot runs: best test value over pruning steps, the baseline for other runs.
    pub best_test_metric: Option<f64>,
    #[serde(rename = "L")]
    pub bound: Option<f64>,
    /// Cold-start runs: mean cosine similarity at the last schedule count.
    pub final_mean_cs: Option<f64>,
}

impl Summary {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.into(),
            metric: None,
            n_f: None,
            cycles: None,
            stop: None,
            train_metric: None,
            test_metric: None,
            best_test_metric: None,
            bound: None,
            final_mean_cs: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub cycle: usize,
    pub state: ModelState,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory, removing artifacts of any earlier run in it.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        let dir = Self { root: root.to_path_buf() };
        fs::create_dir_all(root).map_err(CliError::io(root))?;
        for name in [
            CONFIG, METRICS, EVENTS, BOUND_TRACE, FEATURES, LEARNING_CURVE, SUMMARY, TIMINGS, COLD_START, ZERO_SHOT,
        ] {
            let p = dir.path(name);
            if p.exists() {
                fs::remove_file(&p).map_err(CliError::io(&p))?;
            }
        }
        let cp = dir.path(CHECKPOINTS);
        if cp.exists() {
            fs::remove_dir_all(&cp).map_err(CliError::io(&cp))?;
        }
        Ok(dir)
    }

    pub fn open(root: &Path) -> Result<Self, CliError> {
        if !root.is_dir() {
            return Err(CliError::MissingArtifact(root.to_path_buf()));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::json(&p))?;
        text.push('\n');
        fs::write(&p, text).map_err(CliError::io(&p))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, CliError> {
        let p = self.path(name);
        if !p.exists() {
            return Err(CliError::MissingArtifact(p));
        }
        let raw = fs::read_to_string(&p).map_err(CliError::io(&p))?;
        serde_json::from_str(&raw).map_err(CliError::json(&p))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, text).map_err(CliError::io(&p))
    }

    pub fn append_jsonl<T: Serialize>(&self, name: &str, record: &T) -> Result<(), CliError> {
        let p = self.path(name);
        let line = serde_json::to_string(record).map_err(CliError::json(&p))?;
        let mut f = OpenOptions::new().create(true).append(true).open(&p).map_err(CliError::io(&p))?;
        writeln!(f, "{line}").map_err(CliError::io(&p))
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, CliError> {
        let p = self.path(name);
        if !p.exists() {
            return Err(CliError::MissingArtifact(p));
        }
        let f = File::open(&p).map_err(CliError::io(&p))?;
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(CliError::io(&p))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line).map_err(CliError::json(&p))?);
            }
        }
        Ok(out)
    }

    /// Drops records whose `cycle` field exceeds `last_cycle`, for resuming after a cycle
    /// that was cut short. Returns the number of records kept.
    pub fn truncate_jsonl_after(&self, name: &str, last_cycle: usize) -> Result<usize, CliError> {
        let p = self.path(name);
        if !p.exists() {
            return Ok(0);
        }
        // Kept lines are copied verbatim so a resumed run stays byte-identical.
        let raw = fs::read_to_string(&p).map_err(CliError::io(&p))?;
        let mut kept = 0;
        let mut text = String::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let record: Value = serde_json::from_str(line).map_err(CliError::json(&p))?;
            if record["cycle"].as_u64().is_none_or(|c| c as usize <= last_cycle) {
                text.push_str(line);
                text.push('\n');
                kept += 1;
            }
        }
        fs::write(&p, text).map_err(CliError::io(&p))?;
        Ok(kept)
    }

    pub fn checkpoint_path(&self, cycle: usize) -> PathBuf {
        self.path(CHECKPOINTS).join(format!("cycle_{cycle}.json"))
    }

    pub fn write_checkpoint(&self, checkpoint: &Checkpoint) -> Result<PathBuf, CliError> {
        let dir = self.path(CHECKPOINTS);
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let p = self.checkpoint_path(checkpoint.cycle);
        let text = serde_json::to_string(checkpoint).map_err(CliError::json(&p))?;
        // Written under a temporary name first so an interrupted write never looks complete.
        let tmp = p.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(CliError::io(&tmp))?;
        fs::rename(&tmp, &p).map_err(CliError::io(&p))?;
        Ok(p)
    }

    pub fn latest_checkpoint(&self) -> Result<Option<Checkpoint>, CliError> {
        let dir = self.path(CHECKPOINTS);
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut latest: Option<usize> = None;
        for entry in fs::read_dir(&dir).map_err(CliError::io(&dir))? {
            let name = entry.map_err(CliError::io(&dir))?.file_name();
            let cycle = name
                .to_str()
                .and_then(|n| n.strip_prefix("cycle_"))
                .and_then(|n| n.strip_suffix(".json"))
                .and_then(|n| n.parse::<usize>().ok());
            if let Some(c) = cycle {
                latest = Some(latest.map_or(c, |l| l.max(c)));
            }
        }
        let Some(cycle) = latest else { return Ok(None) };
        let p = self.checkpoint_path(cycle);
        let raw = fs::read_to_string(&p).map_err(CliError::io(&p))?;
        serde_json::from_str(&raw).map(Some).map_err(CliError::json(&p))
    }
}

/// `cycle,n_f,train_metric,test_metric[,baseline]`; missing values are empty cells.
pub fn learning_curve_csv(records: &[MetricsRecord], baseline: Option<f64>) -> String {
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let mut out = String::from("cycle,n_f,train_metric,test_metric");
    if baseline.is_some() {
        out.push_str(",baseline");
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{},{}", r.cycle, r.n_f, r.train_metric, cell(r.test_metric)));
        if let Some(b) = baseline {
            out.push_str(&format!(",{b}"));
        }
        out.push('\n');
    }
    out
}
