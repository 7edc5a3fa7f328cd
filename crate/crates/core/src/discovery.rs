//! Feature discovery: mining new descriptors from posterior splits, targeted mining inside
//! the worst-explained combination of existing features, pruning, the expand-contract
//! driver, and the zero-shot baseline protocol.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, SemanticItem};
use crate::inference::{
    compute_bound, covariate_matrix, mode, mode_values, run_em, BoundSummary, Clamp, ClampSet,
    InferenceConfig, ModelState,
};
use crate::metrics::Metric;
use crate::oracle::{dedup_descriptors, FeatureDescriptor, MiningRequest, Oracle, OracleError};
use crate::statmodel::{
    design_matrix, update_error_rates, FeatureSet, MlpConfig, ModelKind, ERROR_RATE_CAP,
};

/// Error rate assigned to zero-shot features before the first EM iteration.
pub const INITIAL_ERROR_RATE: f64 = 0.1;
const RELAX_STEP: f64 = 0.05;
const PENDING: &str = "(pending)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub tau_high: f64,
    pub tau_low: f64,
    /// Maximum exemplars per group.
    pub n_e: usize,
    pub n_inner: usize,
    pub n_refit: usize,
    pub k_add: usize,
    pub k_cut: usize,
    pub max_cycles: usize,
    pub min_activation: f64,
    pub max_activation: f64,
    pub epsilon_l: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            tau_high: 0.8,
            tau_low: 0.2,
            n_e: 10,
            n_inner: 15,
            n_refit: 5,
            k_add: 5,
            k_cut: 2,
            max_cycles: 15,
            min_activation: 0.02,
            max_activation: 0.98,
            epsilon_l: 1e-6,
            seed: 0,
            parallel: true,
        }
    }
}

impl DiscoveryConfig {
    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(0.0 <= self.tau_low && self.tau_low < self.tau_high && self.tau_high <= 1.0) {
            errors.push(format!(
                "thresholds must satisfy 0 <= tau_low < tau_high <= 1 (got {} and {})",
                self.tau_low, self.tau_high
            ));
        }
        if self.n_e == 0 {
            errors.push("n_e must be at least 1".into());
        }
        if self.n_inner == 0 {
            errors.push("n_inner must be at least 1".into());
        }
        if self.k_add <= self.k_cut {
            errors.push(format!(
                "k_add must exceed k_cut (got {} and {})",
                self.k_add, self.k_cut
            ));
        }
        if !(0.0 <= self.min_activation && self.min_activation < self.max_activation && self.max_activation <= 1.0) {
            errors.push("activation bounds must satisfy 0 <= min < max <= 1".into());
        }
        if self.epsilon_l.is_nan() || self.epsilon_l < 0.0 {
            errors.push("epsilon_l must be non-negative".into());
        }
        errors
    }

    fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            n_inner: self.n_inner,
            early_stop: None,
            parallel: self.parallel,
        }
    }

    /// RNG for one cycle, independent of how earlier cycles consumed randomness.
    pub fn cycle_rng(&self, cycle: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(cycle as u64);
        rng
    }
}

/// Items sharing one mode assignment of the existing features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCombination {
    pub key: Vec<bool>,
    pub members: Vec<usize>,
    pub total_error: f64,
}

/// All observed combinations of the first `n_existing` features, worst first. Each item's
/// error is its variance-scaled squared residual with every feature at its mode.
pub fn combinations(data: &Dataset, state: &ModelState, n_existing: usize) -> Vec<FeatureCombination> {
    let covariates = covariate_matrix(data);
    let design = design_matrix(&mode_values(&state.q), &covariates);
    let modes = mode(&state.q);
    let mut groups: HashMap<Vec<bool>, (Vec<usize>, f64)> = HashMap::new();
    for t in 0..data.len() {
        let key: Vec<bool> = (0..n_existing).map(|i| modes[(t, i)]).collect();
        let input: Vec<f64> = design.row(t).iter().copied().collect();
        let y: Vec<f64> = data.targets().row(t).iter().copied().collect();
        let err = state.model.mahalanobis(&input, &y);
        let entry = groups.entry(key).or_default();
        entry.0.push(t);
        entry.1 += err;
    }
    let mut out: Vec<FeatureCombination> = groups
        .into_iter()
        .map(|(key, (members, total_error))| FeatureCombination {
            key,
            members,
            total_error,
        })
        .collect();
    out.sort_by(|a, b| b.total_error.total_cmp(&a.total_error).then_with(|| a.key.cmp(&b.key)));
    out
}

pub fn select_worst_combination(data: &Dataset, state: &ModelState) -> Option<FeatureCombination> {
    if state.n_features() == 0 {
        return None;
    }
    combinations(data, state, state.n_features()).into_iter().next()
}

/// Random subset of at most `n` indices, returned in ascending order. With `prior`, up to
/// half are drawn from items whose judgment disagrees with the group (`prior[t] != expect`).
pub fn sample_exemplars(
    indices: &[usize],
    n: usize,
    prior: Option<(&[bool], bool)>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut pick = |pool: &[usize], k: usize| -> Vec<usize> {
        let k = k.min(pool.len());
        sample(rng, pool.len(), k).into_iter().map(|j| pool[j]).collect()
    };
    let mut chosen = match prior {
        None => pick(indices, n),
        Some((h, expect)) => {
            let (disagree, agree): (Vec<usize>, Vec<usize>) = indices.iter().partition(|&&t| h[t] != expect);
            let n_dis = (n / 2).min(disagree.len());
            let n_agr = (n - n_dis).min(agree.len());
            let n_dis = (n - n_agr).min(disagree.len());
            let mut c = pick(&disagree, n_dis);
            c.extend(pick(&agree, n_agr));
            c
        }
    };
    chosen.sort_unstable();
    chosen
}

/// Positive and negative exemplar indices from one posterior column restricted to
/// `candidates`, relaxing the thresholds toward 0.5 until both groups are non-empty.
pub fn select_groups(
    q: &[f64],
    candidates: &[usize],
    cfg: &DiscoveryConfig,
    prior: Option<&[bool]>,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut step = 0;
    loop {
        let high = (cfg.tau_high - RELAX_STEP * step as f64).max(0.5);
        let low = (cfg.tau_low + RELAX_STEP * step as f64).min(0.5);
        let pos: Vec<usize> = candidates.iter().copied().filter(|&t| q[t] > high).collect();
        let neg: Vec<usize> = candidates.iter().copied().filter(|&t| q[t] < low).collect();
        if !pos.is_empty() && !neg.is_empty() {
            let pos = sample_exemplars(&pos, cfg.n_e, prior.map(|h| (h, true)), rng);
            let neg = sample_exemplars(&neg, cfg.n_e, prior.map(|h| (h, false)), rng);
            return Some((pos, neg));
        }
        if high <= 0.5 && low >= 0.5 {
            return None;
        }
        step += 1;
    }
}

/// A mined descriptor and its judgments over the training items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub descriptor: FeatureDescriptor,
    pub column: Vec<bool>,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    /// Combination the exemplars were drawn from, when targeted.
    pub target: Option<Vec<bool>>,
}

fn items_at(data: &Dataset, idx: &[usize]) -> Vec<SemanticItem> {
    idx.iter().map(|&t| data.items()[t].clone()).collect()
}

/// Appends a decoupled placeholder feature and runs the inner EM loop.
fn open_new_feature(
    data: &Dataset,
    state: &mut ModelState,
    cfg: &DiscoveryConfig,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<BoundSummary>,
) -> usize {
    let i = state.n_features();
    state
        .features
        .push(FeatureDescriptor::new(PENDING), vec![false; data.len()], ERROR_RATE_CAP);
    state.q = state.q.clone().insert_column(i, 0.5);
    state.model.insert_feature(i, rng);
    let clamps = ClampSet::single(i, Clamp::Decoupled);
    log.extend(run_em(data, state, &clamps, cfg.n_inner, &cfg.inference()));
    i
}

fn mine_and_extract(
    data: &Dataset,
    oracle: &dyn Oracle,
    pos: &[usize],
    neg: &[usize],
    target: Option<Vec<bool>>,
) -> Result<Proposal, OracleError> {
    let request = MiningRequest::new(items_at(data, pos), items_at(data, neg))?;
    let descriptor = oracle.mine(&request)?;
    let column = oracle.extract_batch(data.items(), &descriptor)?;
    Ok(Proposal {
        descriptor,
        column,
        positives: request.positives.into_iter().map(|s| s.id).collect(),
        negatives: request.negatives.into_iter().map(|s| s.id).collect(),
        target,
    })
}

fn propose(
    data: &Dataset,
    state: &mut ModelState,
    oracle: &dyn Oracle,
    cfg: &DiscoveryConfig,
    rng: &mut ChaCha8Rng,
    targets: Vec<FeatureCombination>,
    log: &mut Vec<BoundSummary>,
) -> Result<Option<Proposal>, OracleError> {
    let snapshot = state.clone();
    let i = open_new_feature(data, state, cfg, rng, log);
    let q: Vec<f64> = state.q.column(i).iter().copied().collect();
    let mut chosen = None;
    for combo in &targets {
        if let Some(groups) = select_groups(&q, &combo.members, cfg, None, rng) {
            chosen = Some((groups, Some(combo.key.clone())));
            break;
        }
    }
    if chosen.is_none() {
        let all: Vec<usize> = (0..data.len()).collect();
        chosen = select_groups(&q, &all, cfg, None, rng).map(|g| (g, None));
    }
    let Some(((pos, neg), target)) = chosen else {
        *state = snapshot;
        return Ok(None);
    };
    match mine_and_extract(data, oracle, &pos, &neg, target) {
        Ok(p) => Ok(Some(p)),
        Err(e) => {
            *state = snapshot;
            Err(e)
        }
    }
}

/// Basic addition. On `Some`, `state` holds the new feature as its last column, still
/// decoupled; pass the proposal to [`incorporate`] or restore an earlier state. On `None`
/// (no usable posterior split) `state` is unchanged.
pub fn add_feature(
    data: &Dataset,
    state: &mut ModelState,
    oracle: &dyn Oracle,
    cfg: &DiscoveryConfig,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<BoundSummary>,
) -> Result<Option<Proposal>, OracleError> {
    propose(data, state, oracle, cfg, rng, Vec::new(), log)
}

/// Targeted addition: exemplars come from the worst-explained combination of the existing
/// features, falling back to the next-worst ones and finally to all items.
pub fn add_feature_conditional(
    data: &Dataset,
    state: &mut ModelState,
    oracle: &dyn Oracle,
    cfg: &DiscoveryConfig,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<BoundSummary>,
) -> Result<Option<Proposal>, OracleError> {
    let targets = if state.n_features() == 0 {
        Vec::new()
    } else {
        combinations(data, state, state.n_features())
    };
    propose(data, state, oracle, cfg, rng, targets, log)
}

/// Installs the proposal's descriptor and judgments in the pending last feature, sets its
/// error rate from the current posterior, and refits with every feature coupled.
pub fn incorporate(
    data: &Dataset,
    state: &mut ModelState,
    proposal: &Proposal,
    cfg: &DiscoveryConfig,
    log: &mut Vec<BoundSummary>,
) {
    let i = state.n_features() - 1;
    state
        .features
        .replace(i, proposal.descriptor.clone(), proposal.column.clone());
    let rates = update_error_rates(&state.q, state.features.judgments());
    state.features.set_error_rate(i, rates[i]);
    log.extend(run_em(data, state, &ClampSet::none(), cfg.n_refit, &cfg.inference()));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    /// No posterior split gave both a positive and a negative group.
    DegenerateSplit,
    /// Same descriptor as, or judgments identical or complementary to, an existing feature.
    Duplicate { descriptor: FeatureDescriptor },
    Activation { descriptor: FeatureDescriptor, activation: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AddOutcome {
    Added { index: usize, proposal: Proposal },
    Rejected(Rejection),
}

/// Proposes, screens (duplicates and the activation bounds), and incorporates one feature.
/// Rejections leave `state` as it was.
pub fn try_add(
    data: &Dataset,
    state: &mut ModelState,
    oracle: &dyn Oracle,
    cfg: &DiscoveryConfig,
    conditional: bool,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<BoundSummary>,
) -> Result<AddOutcome, OracleError> {
    let snapshot = state.clone();
    let mut inner_log = Vec::new();
    let proposal = if conditional {
        add_feature_conditional(data, state, oracle, cfg, rng, &mut inner_log)?
    } else {
        add_feature(data, state, oracle, cfg, rng, &mut inner_log)?
    };
    let Some(proposal) = proposal else {
        return Ok(AddOutcome::Rejected(Rejection::DegenerateSplit));
    };
    let redundant = snapshot.features.judgments().columns().iter().any(|c| {
        c == &proposal.column || c.iter().zip(&proposal.column).all(|(a, b)| a != b)
    });
    if redundant || snapshot.features.contains(&proposal.descriptor) {
        *state = snapshot;
        return Ok(AddOutcome::Rejected(Rejection::Duplicate {
            descriptor: proposal.descriptor,
        }));
    }
    let on = proposal.column.iter().filter(|&&b| b).count();
    let activation = on as f64 / proposal.column.len().max(1) as f64;
    if !(cfg.min_activation..=cfg.max_activation).contains(&activation) {
        *state = snapshot;
        return Ok(AddOutcome::Rejected(Rejection::Activation {
            descriptor: proposal.descriptor,
            activation,
        }));
    }
    log.append(&mut inner_log);
    incorporate(data, state, &proposal, cfg, log);
    Ok(AddOutcome::Added {
        index: state.n_features() - 1,
        proposal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub removed: usize,
    pub descriptor: FeatureDescriptor,
    /// Bound lost by removing the feature (after refitting without it).
    pub delta_l: f64,
}

/// Removes the feature whose removal (followed by `n_refit` EM iterations) costs the least
/// bound. Cached judgments of the other features are reused.
pub fn prune_feature(
    data: &Dataset,
    state: &mut ModelState,
    cfg: &DiscoveryConfig,
    log: &mut Vec<BoundSummary>,
) -> Option<PruneOutcome> {
    let n_f = state.n_features();
    if n_f == 0 {
        return None;
    }
    let full = compute_bound(data, state).total();
    let refit = |j: usize| {
        let mut s = state.clone();
        s.remove_feature(j);
        let trace = run_em(data, &mut s, &ClampSet::none(), cfg.n_refit, &cfg.inference());
        let reduced = compute_bound(data, &s).total();
        (full - reduced, s, trace)
    };
    let candidates: Vec<_> = if cfg.parallel {
        (0..n_f).into_par_iter().map(refit).collect()
    } else {
        (0..n_f).map(refit).collect()
    };
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then_with(|| a.0.cmp(&b.0)))
        .map(|(j, _)| j)
        .expect("at least one feature");
    let descriptor = state.features.descriptors()[best].clone();
    let (delta_l, s, trace) = candidates.into_iter().nth(best).expect("index in range");
    *state = s;
    log.extend(trace);
    Some(PruneOutcome {
        removed: best,
        descriptor,
        delta_l,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DiscoveryEvent {
    Added {
        cycle: usize,
        index: usize,
        descriptor: FeatureDescriptor,
        activation: f64,
        error_rate: f64,
        target: Option<Vec<bool>>,
        positives: Vec<String>,
        negatives: Vec<String>,
    },
    Rejected {
        cycle: usize,
        #[serde(flatten)]
        rejection: Rejection,
    },
    Pruned {
        cycle: usize,
        #[serde(flatten)]
        outcome: PruneOutcome,
    },
    CycleEnd {
        cycle: usize,
        n_f: usize,
        #[serde(rename = "L")]
        l: f64,
    },
}

/// Hooks for the driver: events as they happen, the bound after each EM iteration, and a
/// per-cycle callback for checkpoints and metrics.
pub trait DiscoveryObserver {
    fn on_event(&mut self, _event: &DiscoveryEvent) -> crate::Result<()> {
        Ok(())
    }

    fn on_bound(&mut self, _summary: &BoundSummary) -> crate::Result<()> {
        Ok(())
    }

    fn on_cycle(&mut self, _cycle: usize, _state: &ModelState, _bound: f64) -> crate::Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl DiscoveryObserver for NoObserver {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxCycles,
    Unchanged,
    NoImprovement,
}

#[derive(Debug, Error)]
pub enum DiscoveryError {
    /// The oracle failed mid-cycle. `checkpoint` is the state after the last completed cycle.
    #[error("cycle {cycle} aborted by oracle failure: {source}")]
    Aborted {
        cycle: usize,
        checkpoint: Box<ModelState>,
        #[source]
        source: OracleError,
    },
    #[error(transparent)]
    Observer(#[from] crate::Error),
}

#[derive(Debug, Clone)]
pub struct ExpandContractResult {
    pub state: ModelState,
    pub last_cycle: usize,
    pub stop: StopReason,
}

pub fn expand_contract(
    data: &Dataset,
    state: ModelState,
    oracle: &dyn Oracle,
    cfg: &DiscoveryConfig,
    observer: &mut dyn DiscoveryObserver,
) -> Result<ExpandContractResult, DiscoveryError> {
    expand_contract_from(data, state, oracle, cfg, 1, observer)
}

/// Runs cycles `first_cycle..=max_cycles`; used directly when resuming from a checkpoint.
pub fn expand_contract_from(
    data: &Dataset,
    mut state: ModelState,
    oracle: &dyn Oracle,
    cfg: &DiscoveryConfig,
    first_cycle: usize,
    observer: &mut dyn DiscoveryObserver,
) -> Result<ExpandContractResult, DiscoveryError> {
    let mut last_cycle = first_cycle.saturating_sub(1);
    for cycle in first_cycle..=cfg.max_cycles {
        let start = state.clone();
        let l_before = compute_bound(data, &state).total();
        let mut rng = cfg.cycle_rng(cycle);
        let mut log = Vec::new();
        let abort = |source| DiscoveryError::Aborted {
            cycle,
            checkpoint: Box::new(start.clone()),
            source,
        };

        for _ in 0..cfg.k_add {
            let outcome = try_add(data, &mut state, oracle, cfg, true, &mut rng, &mut log).map_err(abort)?;
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
            for s in log.drain(..) {
                observer.on_bound(&s)?;
            }
            observer.on_event(&event)?;
        }
        for _ in 0..cfg.k_cut {
            let Some(outcome) = prune_feature(data, &mut state, cfg, &mut log) else {
                break;
            };
            for s in log.drain(..) {
                observer.on_bound(&s)?;
            }
            observer.on_event(&DiscoveryEvent::Pruned { cycle, outcome })?;
        }

        let l_after = compute_bound(data, &state).total();
        observer.on_event(&DiscoveryEvent::CycleEnd {
            cycle,
            n_f: state.n_features(),
            l: l_after,
        })?;
        observer.on_cycle(cycle, &state, l_after)?;
        last_cycle = cycle;
        if state.features.descriptors() == start.features.descriptors() {
            return Ok(ExpandContractResult {
                state,
                last_cycle,
                stop: StopReason::Unchanged,
            });
        }
        if l_after - l_before < cfg.epsilon_l {
            return Ok(ExpandContractResult {
                state,
                last_cycle,
                stop: StopReason::NoImprovement,
            });
        }
    }
    Ok(ExpandContractResult {
        state,
        last_cycle,
        stop: StopReason::MaxCycles,
    })
}

/// Oracle judgments for a fixed item set, cached per descriptor.
pub struct JudgmentCache {
    items: Vec<SemanticItem>,
    columns: HashMap<FeatureDescriptor, Vec<bool>>,
}

impl JudgmentCache {
    pub fn new(items: Vec<SemanticItem>) -> Self {
        Self {
            items,
            columns: HashMap::new(),
        }
    }

    pub fn insert(&mut self, descriptor: FeatureDescriptor, column: Vec<bool>) {
        self.columns.insert(descriptor, column);
    }

    /// 0/1 matrix (items × descriptors), extracting only descriptors not seen before.
    pub fn matrix(&mut self, oracle: &dyn Oracle, descriptors: &[FeatureDescriptor]) -> Result<DMatrix<f64>, OracleError> {
        for d in descriptors {
            if !self.columns.contains_key(d) && !self.items.is_empty() {
                let column = oracle.extract_batch(&self.items, d)?;
                self.columns.insert(d.clone(), column);
            }
        }
        Ok(DMatrix::from_fn(self.items.len(), descriptors.len(), |t, i| {
            f64::from(u8::from(self.columns[&descriptors[i]][t]))
        }))
    }
}

/// Predictions with every feature set to its oracle judgment.
pub fn predict_from_judgments(state: &ModelState, judgments: &DMatrix<f64>, data: &Dataset) -> DMatrix<f64> {
    state.predict_with(judgments, &covariate_matrix(data))
}

/// Train metric with features at their judgments.
pub fn train_metric(data: &Dataset, state: &ModelState, metric: Metric) -> f64 {
    let pred = predict_from_judgments(state, &state.features.judgment_matrix(), data);
    metric.evaluate(&pred, data.targets())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotStep {
    pub n_f: usize,
    pub train_metric: f64,
    pub test_metric: f64,
    pub removed: Option<FeatureDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub proposals: Vec<FeatureDescriptor>,
    pub trace: Vec<ZeroShotStep>,
    pub best_step: usize,
    pub best_test_metric: f64,
}

/// Item texts with their targets appended, as shown to the oracle for zero-shot proposal.
pub fn items_with_targets(data: &Dataset) -> Vec<SemanticItem> {
    data.items()
        .iter()
        .enumerate()
        .map(|(t, it)| {
            let y: Vec<String> = data.targets().row(t).iter().map(|v| format!("{v}")).collect();
            SemanticItem {
                id: it.id.clone(),
                text: format!("{} | target: {}", it.text, y.join(", ")),
                covariates: it.covariates.clone(),
            }
        })
        .collect()
}

/// Proposes `n` features from the whole item set (targets included), fits on the training
/// split, then prunes one feature at a time down to one, recording train and test metrics
/// at every size. The best test value is the baseline.
#[allow(clippy::too_many_arguments)]
pub fn zero_shot_baseline(
    train: &Dataset,
    test: &Dataset,
    oracle: &dyn Oracle,
    task_description: &str,
    n: usize,
    kind: ModelKind,
    mlp: &MlpConfig,
    cfg: &DiscoveryConfig,
    metric: Metric,
) -> Result<ZeroShotResult, OracleError> {
    let mut shown = items_with_targets(train);
    shown.extend(items_with_targets(test));
    let proposals = dedup_descriptors(oracle.propose_zero_shot(&shown, task_description, n)?);
    if proposals.is_empty() {
        return Err(OracleError::Malformed("zero-shot proposal returned no descriptors".into()));
    }
    let mut features = FeatureSet::empty(train.len());
    for d in &proposals {
        let column = oracle.extract_batch(train.items(), d)?;
        features.push(d.clone(), column, INITIAL_ERROR_RATE);
    }
    let mut test_cache = JudgmentCache::new(test.items().to_vec());
    let mut state = ModelState::with_features(train, features, kind, mlp);
    run_em(train, &mut state, &ClampSet::none(), cfg.n_inner, &cfg.inference());

    let mut trace = Vec::new();
    let mut removed = None;
    loop {
        let h_test = test_cache.matrix(oracle, state.features.descriptors())?;
        let test_pred = predict_from_judgments(&state, &h_test, test);
        trace.push(ZeroShotStep {
            n_f: state.n_features(),
            train_metric: train_metric(train, &state, metric),
            test_metric: metric.evaluate(&test_pred, test.targets()),
            removed: removed.take(),
        });
        if state.n_features() <= 1 {
            break;
        }
        let outcome = prune_feature(train, &mut state, cfg, &mut Vec::new()).expect("features remain");
        removed = Some(outcome.descriptor);
    }
    let mut best_step = 0;
    for (k, s) in trace.iter().enumerate() {
        if metric.better(s.test_metric, trace[best_step].test_metric) {
            best_step = k;
        }
    }
    Ok(ZeroShotResult {
        proposals,
        best_test_metric: trace[best_step].test_metric,
        best_step,
        trace,
    })
}
