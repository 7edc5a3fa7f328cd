use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use genz_core::coldstart::{
    cold_start_sim, embedding_dataset, svd_embed, synthetic_ratings, top_items_filter, RatingsMatrix,
};
use genz_core::corpus::{integer_dataset, load_dataset, load_items_json, log_transform_targets, split, DataFormat};
use genz_core::discovery::{
    expand_contract_from, predict_from_judgments, train_metric, try_add, zero_shot_baseline, AddOutcome,
    DiscoveryError, DiscoveryEvent, DiscoveryObserver, JudgmentCache,
};
use genz_core::inference::compute_bound;
use genz_core::oracle::{
    ChatTransport, HttpTransport, LlmOracle, PromptTemplates, RecordingTransport, ReplayTransport,
    SyntheticOracle, TranscriptWriter,
};
use genz_core::{BoundSummary, Dataset, Metric, ModelState, Oracle, OracleError, StopReason};

use crate::artifacts::{
    learning_curve_csv, Checkpoint, FeatureRecord, MetricsRecord, RunDir, Summary, BOUND_TRACE, COLD_START,
    CONFIG, EVENTS, FEATURES, LEARNING_CURVE, METRICS, SUMMARY, TIMINGS, ZERO_SHOT,
};
use crate::config::{experiment_name, metric_name, DataSource, Experiment, OracleBackend, OracleConfig, RunConfig};
use crate::error::CliError;

pub fn build_oracle(cfg: &OracleConfig) -> Result<Box<dyn Oracle>, CliError> {
    let transport: Box<dyn ChatTransport> = match cfg.backend {
        OracleBackend::Synthetic => return Ok(Box::new(SyntheticOracle::new())),
        OracleBackend::Remote => {
            let http = HttpTransport::from_env(Duration::from_secs(cfg.timeout_secs))
                .map_err(|e| CliError::Config(vec![format!("remote oracle: {e}")]))?;
            match &cfg.transcript {
                Some(path) => {
                    let writer = TranscriptWriter::append_to(path).map_err(CliError::io(path))?;
                    Box::new(RecordingTransport::new(http, writer))
                }
                None => Box::new(http),
            }
        }
        OracleBackend::Replay => {
            let path = cfg
                .transcript
                .as_ref()
                .ok_or_else(|| CliError::Config(vec!["replay oracle needs oracle.transcript".into()]))?;
            Box::new(ReplayTransport::load(path)?)
        }
    };
    let templates = match &cfg.templates {
        Some(dir) => PromptTemplates::from_dir(dir).map_err(CliError::io(dir))?,
        None => PromptTemplates::default(),
    };
    Ok(Box::new(LlmOracle::new(transport, templates, cfg.llm())))
}

/// The experiment's items and, for rating data, the ratings they came from.
pub struct LoadedData {
    pub dataset: Option<Dataset>,
    pub ratings: Option<RatingsMatrix>,
}

fn load_titles(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let raw = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&raw).map_err(CliError::json(path))
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData, CliError> {
    let ratings = match &cfg.data {
        DataSource::Integers { count } => {
            return Ok(LoadedData { dataset: Some(integer_dataset(*count)), ratings: None })
        }
        DataSource::Lines { path } => {
            let d = load_dataset(path, DataFormat::Lines)?;
            let d = if cfg.log_target() { log_transform_targets(&d)? } else { d };
            return Ok(LoadedData { dataset: Some(d), ratings: None });
        }
        DataSource::ItemsJson { path, targets } => {
            let d = load_items_json(path, targets.as_deref())?;
            let d = if cfg.log_target() { log_transform_targets(&d)? } else { d };
            return Ok(LoadedData { dataset: Some(d), ratings: None });
        }
        DataSource::Ratings { path, .. } => RatingsMatrix::load(path)?,
        DataSource::SyntheticRatings { users, items, rank, density, seed } => {
            synthetic_ratings(*users, *items, *rank, *density, *seed)?
        }
    };
    if cfg.experiment == Experiment::ColdstartSim {
        return Ok(LoadedData { dataset: None, ratings: Some(ratings) });
    }
    let ratings = match cfg.embedding.top_items {
        Some(n) => ratings.select_items(&top_items_filter(&ratings, n)),
        None => ratings,
    };
    let titles = match &cfg.data {
        DataSource::Ratings { titles: Some(p), .. } => Some(load_titles(p)?),
        _ => None,
    };
    let k = cfg.embedding.k.min(ratings.n_users()).min(ratings.n_items());
    let dataset = embedding_dataset(&ratings, k, cfg.embedding.alpha, titles.as_ref())?;
    Ok(LoadedData { dataset: Some(dataset), ratings: Some(ratings) })
}

#[derive(Serialize)]
struct BoundRecord {
    cycle: usize,
    iter: usize,
    #[serde(flatten)]
    bound: BoundSummary,
}

#[derive(Serialize)]
struct TimingRecord {
    cycle: usize,
    seconds: f64,
}

/// Writes events, bound traces, metrics and checkpoints as discovery proceeds.
struct RunObserver<'a> {
    dir: &'a RunDir,
    metric: Metric,
    oracle: &'a dyn Oracle,
    train: &'a Dataset,
    test: Option<(&'a Dataset, JudgmentCache)>,
    baseline: Option<f64>,
    records: Vec<MetricsRecord>,
    cycle: usize,
    iter: usize,
    cycle_started: Instant,
    last_checkpoint: Option<PathBuf>,
    /// The error behind an observer failure; the core only sees a placeholder.
    failure: Option<CliError>,
}

impl<'a> RunObserver<'a> {
    fn record(&mut self, result: Result<(), CliError>) -> genz_core::Result<()> {
        result.map_err(|e| {
            let placeholder = genz_core::Error::Validation(format!("run observer: {e}"));
            self.failure = Some(e);
            placeholder
        })
    }

    fn finish_cycle(&mut self, cycle: usize, state: &ModelState, bound: f64) -> Result<(), CliError> {
        let test_metric = match &mut self.test {
            Some((test, cache)) => {
                let h = cache
                    .matrix(self.oracle, state.features.descriptors())
                    .map_err(|source| CliError::Oracle { source, checkpoint: self.last_checkpoint.clone() })?;
                let pred = predict_from_judgments(state, &h, test);
                Some(self.metric.evaluate(&pred, test.targets()))
            }
            None => None,
        };
        let record = MetricsRecord {
            cycle,
            n_f: state.n_features(),
            train_metric: train_metric(self.train, state, self.metric),
            test_metric,
            bound: Some(bound),
        };
        self.dir.append_jsonl(METRICS, &record)?;
        self.records.push(record);
        self.dir.write_text(LEARNING_CURVE, &learning_curve_csv(&self.records, self.baseline))?;
        self.dir.write_json(FEATURES, &FeatureRecord::from_state(state))?;
        self.last_checkpoint = Some(self.dir.write_checkpoint(&Checkpoint { cycle, state: state.clone() })?);
        self.dir.append_jsonl(
            TIMINGS,
            &TimingRecord { cycle, seconds: self.cycle_started.elapsed().as_secs_f64() },
        )?;
        self.cycle = cycle + 1;
        self.cycle_started = Instant::now();
        Ok(())
    }
}

impl DiscoveryObserver for RunObserver<'_> {
    fn on_event(&mut self, event: &DiscoveryEvent) -> genz_core::Result<()> {
        let r = self.dir.append_jsonl(EVENTS, event);
        self.record(r)
    }

    fn on_bound(&mut self, summary: &BoundSummary) -> genz_core::Result<()> {
        self.iter += 1;
        let r = self.dir.append_jsonl(BOUND_TRACE, &BoundRecord { cycle: self.cycle, iter: self.iter, bound: *summary });
        self.record(r)
    }

    fn on_cycle(&mut self, cycle: usize, state: &ModelState, bound: f64) -> genz_core::Result<()> {
        let r = self.finish_cycle(cycle, state, bound);
        self.record(r)
    }
}

fn read_baseline(cfg: &RunConfig) -> Result<Option<f64>, CliError> {
    match &cfg.baseline_run {
        Some(dir) => Ok(RunDir::open(dir)?.read_json::<Summary>(SUMMARY)?.best_test_metric),
        None => Ok(None),
    }
}

fn validated(cfg: &RunConfig) -> Result<(), CliError> {
    let errors = cfg.validate();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(errors))
    }
}

/// Runs the configured experiment into `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<Summary, CliError> {
    validated(cfg)?;
    let dir = RunDir::create(&cfg.output_dir)?;
    dir.write_json(CONFIG, cfg)?;
    let data = load_data(cfg)?;
    log::info!("running {} into {}", experiment_name(cfg.experiment), dir.root().display());
    match cfg.experiment {
        Experiment::ColdstartSim => run_cold_start(cfg, &dir, data.ratings.expect("ratings loaded")),
        Experiment::ZeroShotBaseline => {
            let oracle = build_oracle(&cfg.oracle)?;
            run_zero_shot(cfg, &dir, &data.dataset.expect("dataset loaded"), oracle.as_ref())
        }
        _ => {
            let oracle = build_oracle(&cfg.oracle)?;
            run_cyclic(cfg, &dir, data.dataset.expect("dataset loaded"), oracle.as_ref(), None)
        }
    }
}

/// Continues a cyclic run from its latest checkpoint, using the configuration stored with it.
pub fn resume(out: &Path) -> Result<Summary, CliError> {
    let dir = RunDir::open(out)?;
    let cfg: RunConfig = dir.read_json(CONFIG)?;
    validated(&cfg)?;
    if !cfg.experiment.is_cyclic() {
        return Err(CliError::Config(vec![format!(
            "{} runs have no cycles to resume; start them again with `run`",
            experiment_name(cfg.experiment)
        )]));
    }
    if dir.path(SUMMARY).exists() {
        log::info!("run in {} already finished", out.display());
        return dir.read_json(SUMMARY);
    }
    let checkpoint = dir
        .latest_checkpoint()?
        .ok_or_else(|| CliError::MissingArtifact(dir.path(crate::artifacts::CHECKPOINTS)))?;
    log::info!("resuming {} after cycle {}", out.display(), checkpoint.cycle);
    for name in [METRICS, EVENTS, BOUND_TRACE, TIMINGS] {
        dir.truncate_jsonl_after(name, checkpoint.cycle)?;
    }
    let data = load_data(&cfg)?;
    let oracle = build_oracle(&cfg.oracle)?;
    run_cyclic(&cfg, &dir, data.dataset.expect("dataset loaded"), oracle.as_ref(), Some(checkpoint))
}

fn run_cyclic(
    cfg: &RunConfig,
    dir: &RunDir,
    data: Dataset,
    oracle: &dyn Oracle,
    resume_from: Option<Checkpoint>,
) -> Result<Summary, CliError> {
    let (train, test) = if cfg.experiment == Experiment::BinaryToy {
        (data, None)
    } else {
        let (train, test) = split(&data, cfg.split)?;
        (train, Some(test))
    };
    let mut observer = RunObserver {
        dir,
        metric: cfg.metric,
        oracle,
        train: &train,
        test: test.as_ref().map(|t| (t, JudgmentCache::new(t.items().to_vec()))),
        baseline: read_baseline(cfg)?,
        records: Vec::new(),
        cycle: 0,
        iter: 0,
        cycle_started: Instant::now(),
        last_checkpoint: None,
        failure: None,
    };

    let (state, first_cycle) = match resume_from {
        Some(cp) => {
            observer.records = dir.read_jsonl(METRICS)?;
            observer.iter = dir.read_jsonl::<serde_json::Value>(BOUND_TRACE).map_or(0, |v| v.len());
            observer.cycle = cp.cycle + 1;
            observer.last_checkpoint = Some(dir.checkpoint_path(cp.cycle));
            (cp.state, cp.cycle + 1)
        }
        None => {
            let state = ModelState::new(&train, cfg.model, &cfg.mlp);
            let bound = compute_bound(&train, &state).total();
            observer.finish_cycle(0, &state, bound)?;
            (state, 1)
        }
    };

    let outcome = if cfg.experiment == Experiment::BinaryToy {
        sequential_additions(cfg, &train, state, oracle, first_cycle, &mut observer)
    } else {
        expand_contract_from(&train, state, oracle, &cfg.discovery, first_cycle, &mut observer)
            .map(|r| (r.state, r.last_cycle, r.stop))
    };
    let (state, last_cycle, stop) = match outcome {
        Ok(v) => v,
        Err(DiscoveryError::Aborted { cycle, source, .. }) => {
            log::error!("cycle {cycle} aborted: {source}");
            return Err(CliError::Oracle { source, checkpoint: observer.last_checkpoint.clone() });
        }
        Err(DiscoveryError::Observer(e)) => return Err(observer.failure.take().unwrap_or(CliError::Core(e))),
    };

    let last = observer.records.last().cloned();
    let summary = Summary {
        metric: Some(metric_name(cfg.metric).into()),
        n_f: Some(state.n_features()),
        cycles: Some(last_cycle),
        stop: Some(stop),
        train_metric: last.as_ref().map(|r| r.train_metric),
        test_metric: last.as_ref().and_then(|r| r.test_metric),
        bound: Some(compute_bound(&train, &state).total()),
        ..Summary::new(experiment_name(cfg.experiment))
    };
    dir.write_json(SUMMARY, &summary)?;
    Ok(summary)
}

/// The toy protocol: one unconditional addition per cycle, no pruning.
fn sequential_additions(
    cfg: &RunConfig,
    train: &Dataset,
    mut state: ModelState,
    oracle: &dyn Oracle,
    first_cycle: usize,
    observer: &mut RunObserver<'_>,
) -> Result<(ModelState, usize, StopReason), DiscoveryError> {
    let mut last_cycle = first_cycle - 1;
    for cycle in first_cycle..=cfg.toy_features {
        let mut rng = cfg.discovery.cycle_rng(cycle);
        let mut log = Vec::new();
        let outcome = try_add(train, &mut state, oracle, &cfg.discovery, false, &mut rng, &mut log).map_err(
            |source: OracleError| DiscoveryError::Aborted { cycle, checkpoint: Box::new(state.clone()), source },
        )?;
        for s in &log {
            observer.on_bound(s)?;
        }
        let event = match outcome {
            AddOutcome::Added { index, proposal } => DiscoveryEvent::Added {
                cycle,
                index,
                activation: state.features.activation(index),
                error_rate: state.features.error_rates()[index],
                descriptor: proposal.descriptor,
                target: proposal.target,
                positives: proposal.positives,
                negatives: proposal.negatives,
            },
            AddOutcome::Rejected(rejection) => DiscoveryEvent::Rejected { cycle, rejection },
        };
        observer.on_event(&event)?;
        let l = compute_bound(train, &state).total();
        observer.on_event(&DiscoveryEvent::CycleEnd { cycle, n_f: state.n_features(), l })?;
        observer.on_cycle(cycle, &state, l)?;
        last_cycle = cycle;
    }
    Ok((state, last_cycle, StopReason::MaxCycles))
}

fn run_zero_shot(cfg: &RunConfig, dir: &RunDir, data: &Dataset, oracle: &dyn Oracle) -> Result<Summary, CliError> {
    let (train, test) = split(data, cfg.split)?;
    let started = Instant::now();
    let result = zero_shot_baseline(
        &train,
        &test,
        oracle,
        &cfg.zero_shot.task,
        cfg.zero_shot.n_features,
        cfg.model,
        &cfg.mlp,
        &cfg.discovery,
        cfg.metric,
    )
    .map_err(|source| CliError::Oracle { source, checkpoint: None })?;
    let records: Vec<MetricsRecord> = result
        .trace
        .iter()
        .enumerate()
        .map(|(k, s)| MetricsRecord {
            cycle: k,
            n_f: s.n_f,
            train_metric: s.train_metric,
            test_metric: Some(s.test_metric),
            bound: None,
        })
        .collect();
    for r in &records {
        dir.append_jsonl(METRICS, r)?;
    }
    dir.write_text(LEARNING_CURVE, &learning_curve_csv(&records, Some(result.best_test_metric)))?;
    dir.write_json(ZERO_SHOT, &result)?;
    let features: Vec<FeatureRecord> = result
        .proposals
        .iter()
        .map(|d| FeatureRecord { descriptor: d.clone(), error_rate: None, activation: None })
        .collect();
    dir.write_json(FEATURES, &features)?;
    dir.append_jsonl(TIMINGS, &TimingRecord { cycle: 0, seconds: started.elapsed().as_secs_f64() })?;

    let best = &result.trace[result.best_step];
    let summary = Summary {
        metric: Some(metric_name(cfg.metric).into()),
        n_f: Some(best.n_f),
        train_metric: Some(best.train_metric),
        test_metric: Some(best.test_metric),
        best_test_metric: Some(result.best_test_metric),
        ..Summary::new(experiment_name(cfg.experiment))
    };
    dir.write_json(SUMMARY, &summary)?;
    Ok(summary)
}

fn run_cold_start(cfg: &RunConfig, dir: &RunDir, ratings: RatingsMatrix) -> Result<Summary, CliError> {
    let cs = &cfg.cold_start;
    let started = Instant::now();
    let k = cfg.embedding.k.min(ratings.n_users()).min(ratings.n_items());
    let emb = svd_embed(&ratings, k, cfg.embedding.alpha)?;
    let pool: Vec<usize> = match cs.pool_size {
        Some(n) => top_items_filter(&ratings, n),
        None => (0..ratings.n_items()).collect(),
    };
    let pool: Vec<usize> = pool.into_iter().filter(|&i| ratings.count(i) > 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cs.seed);
    let mut items: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), cs.n_items.min(pool.len()))
        .into_iter()
        .map(|j| pool[j])
        .collect();
    items.sort_unstable();
    let curve = cold_start_sim(&emb, &ratings, &items, &cs.schedule, cs.seed, cs.n_trials)?;
    dir.write_text(COLD_START, &curve.to_csv())?;
    dir.append_jsonl(TIMINGS, &TimingRecord { cycle: 0, seconds: started.elapsed().as_secs_f64() })?;
    let summary = Summary {
        final_mean_cs: curve.mean.last().copied(),
        ..Summary::new(experiment_name(cfg.experiment))
    };
    dir.write_json(SUMMARY, &summary)?;
    Ok(summary)
}
