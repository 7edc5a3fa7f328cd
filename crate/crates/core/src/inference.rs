//! Mean-field E-step, M-step dispatch, and bound accounting.
//!
//! Two E-step paths share one interface. With [`ModelKind::LinearExact`] the observation
//! term of each coordinate update is the closed-form difference of expected log-densities,
//! so every update maximizes the bound exactly and full EM iterations never decrease it.
//! The other kinds evaluate the observation model at the mode of the remaining features.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::statmodel::{
    design_matrix, feature_loglik, linear_mstep, linear_t1_exact, term_t2, term_t3,
    update_error_rates, FeatureSet, LinearModel, MlpConfig, ModelKind, ObservationModel,
    PosteriorMatrix, ERROR_RATE_CAP,
};

/// Posterior values stay this far from 0 and 1.
pub const Q_MARGIN: f64 = 1e-12;
const LOGIT_CLIP: f64 = 500.0;

pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-LOGIT_CLIP, LOGIT_CLIP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_q(q: f64) -> f64 {
    q.clamp(Q_MARGIN, 1.0 - Q_MARGIN)
}

/// Per-feature override during inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    /// Oracle judgments are ignored and the error rate is left at 0.5.
    Decoupled,
    /// Posterior pinned to 0.
    Off,
    /// Posterior pinned to 1.
    On,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClampSet(BTreeMap<usize, Clamp>);

impl ClampSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(i: usize, clamp: Clamp) -> Self {
        let mut s = Self::default();
        s.set(i, clamp);
        s
    }

    /// At most one entry per feature: a later call replaces the earlier one.
    pub fn set(&mut self, i: usize, clamp: Clamp) {
        self.0.insert(i, clamp);
    }

    pub fn get(&self, i: usize) -> Option<Clamp> {
        self.0.get(&i).copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.contains_key(&i)
    }

    fn validate(&self, n_f: usize) {
        if let Some((&i, _)) = self.0.iter().next_back() {
            assert!(i < n_f, "clamp on feature {i} but only {n_f} features");
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub n_inner: usize,
    /// Stop an EM run early once an iteration improves the bound by less than this.
    pub early_stop: Option<f64>,
    /// Process items in parallel during a sweep (results are identical to serial).
    pub parallel: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n_inner: 15,
            early_stop: None,
            parallel: true,
        }
    }
}

/// Everything the E- and M-steps read and write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub features: FeatureSet,
    pub q: PosteriorMatrix,
    pub model: ObservationModel,
    pub kind: ModelKind,
}

pub fn covariate_matrix(data: &Dataset) -> DMatrix<f64> {
    let (t, n_x) = (data.len(), data.covariate_dim());
    DMatrix::from_fn(t, n_x, |r, c| data.items()[r].covariates[c])
}

impl ModelState {
    /// No features; the observation model is fitted to the covariates alone.
    pub fn new(data: &Dataset, kind: ModelKind, mlp: &MlpConfig) -> Self {
        Self::with_features(data, FeatureSet::empty(data.len()), kind, mlp)
    }

    /// Posteriors start at the oracle-implied prior, then one M-step fits the model.
    pub fn with_features(data: &Dataset, features: FeatureSet, kind: ModelKind, mlp: &MlpConfig) -> Self {
        let ll = feature_loglik(&features);
        let q = DMatrix::from_fn(data.len(), features.len(), |t, i| clamp_q(sigmoid(ll.log_odds(t, i))));
        let model = kind.build(features.len() + data.covariate_dim(), data.target_dim(), mlp);
        let mut state = Self {
            features,
            q,
            model,
            kind,
        };
        mstep(data, &mut state);
        state
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Model predictions with features set to given 0/1 values (items × features).
    pub fn predict_with(&self, z: &DMatrix<f64>, covariates: &DMatrix<f64>) -> DMatrix<f64> {
        self.model.predict_rows(&design_matrix(z, covariates))
    }

    /// Drops feature `i` everywhere: descriptor, error rate, judgments, posterior, model input.
    pub fn remove_feature(&mut self, i: usize) {
        self.features.remove(i);
        self.q = self.q.clone().remove_column(i);
        self.model.remove_feature(i);
    }
}

/// Elementwise `q > 0.5`; exactly 0.5 maps to off.
pub fn mode(q: &PosteriorMatrix) -> DMatrix<bool> {
    q.map(|v| v > 0.5)
}

pub fn mode_values(q: &PosteriorMatrix) -> DMatrix<f64> {
    q.map(|v| if v > 0.5 { 1.0 } else { 0.0 })
}

/// Bound terms per item and their total.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundBreakdown {
    pub t1: DVector<f64>,
    pub t2: DVector<f64>,
    pub t3: DVector<f64>,
}

impl BoundBreakdown {
    pub fn per_item(&self) -> DVector<f64> {
        &self.t1 + &self.t2 + &self.t3
    }

    pub fn total(&self) -> f64 {
        self.t1.sum() + self.t2.sum() + self.t3.sum()
    }

    pub fn summary(&self, n_f: usize) -> BoundSummary {
        BoundSummary {
            l: self.total(),
            t1: self.t1.sum(),
            t2: self.t2.sum(),
            t3: self.t3.sum(),
            n_f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T2")]
    pub t2: f64,
    #[serde(rename = "T3")]
    pub t3: f64,
    pub n_f: usize,
}

pub fn compute_bound(data: &Dataset, state: &ModelState) -> BoundBreakdown {
    let ll = feature_loglik(&state.features);
    let covariates = covariate_matrix(data);
    let y = data.targets();
    let t1 = match (state.kind, &state.model) {
        (ModelKind::LinearExact, ObservationModel::Linear(lin)) => DVector::from_fn(data.len(), |t, _| {
            let q: Vec<f64> = state.q.row(t).iter().copied().collect();
            let x: Vec<f64> = covariates.row(t).iter().copied().collect();
            let yt: Vec<f64> = y.row(t).iter().copied().collect();
            linear_t1_exact(&q, &x, &yt, lin)
        }),
        _ => {
            let design = design_matrix(&mode_values(&state.q), &covariates);
            let pred = state.model.predict_rows(&design);
            let var = state.model.variances();
            DVector::from_fn(data.len(), |t, _| {
                let yt: Vec<f64> = y.row(t).iter().copied().collect();
                crate::statmodel::gaussian_loglik(&yt, &pred.row(t).transpose(), var)
            })
        }
    };
    BoundBreakdown {
        t1,
        t2: term_t2(&state.q, &ll),
        t3: term_t3(&state.q),
    }
}

/// Prior log-odds per cell, zeroed for decoupled features.
fn prior_odds(state: &ModelState, clamps: &ClampSet) -> DMatrix<f64> {
    let ll = feature_loglik(&state.features);
    DMatrix::from_fn(state.q.nrows(), state.q.ncols(), |t, i| match clamps.get(i) {
        Some(Clamp::Decoupled) => 0.0,
        _ => ll.log_odds(t, i),
    })
}

fn update_row_exact(row: &mut [f64], x: &[f64], y: &[f64], lin: &LinearModel, odds: &[f64], frozen: &[bool]) {
    let input: Vec<f64> = row.iter().chain(x).copied().collect();
    let pred = lin.predict(&input);
    let mut r: Vec<f64> = y.iter().zip(pred.iter()).map(|(a, b)| a - b).collect();
    for i in 0..row.len() {
        if frozen[i] {
            continue;
        }
        let col = lin.lambda.column(i);
        let mut gain = 0.0;
        for d in 0..r.len() {
            r[d] += col[d] * row[i];
            gain += (2.0 * r[d] * col[d] - col[d] * col[d]) / (2.0 * lin.sigma2[d]);
        }
        let q = clamp_q(sigmoid(gain + odds[i]));
        for d in 0..r.len() {
            r[d] -= col[d] * q;
        }
        row[i] = q;
    }
}

fn update_row_mode(row: &mut [f64], x: &[f64], y: &[f64], model: &ObservationModel, odds: &[f64], frozen: &[bool]) {
    let n_f = row.len();
    let mut input: Vec<f64> = row
        .iter()
        .map(|&v| if v > 0.5 { 1.0 } else { 0.0 })
        .chain(x.iter().copied())
        .collect();
    for i in 0..n_f {
        if frozen[i] {
            continue;
        }
        input[i] = 1.0;
        let on = model.obs_loglik_at(&input, y);
        input[i] = 0.0;
        let off = model.obs_loglik_at(&input, y);
        let q = clamp_q(sigmoid(on - off + odds[i]));
        row[i] = q;
        input[i] = if q > 0.5 { 1.0 } else { 0.0 };
    }
}

/// New value for cell `(t, i)` given the current state; nothing is written.
pub fn update_q_cell(data: &Dataset, state: &ModelState, clamps: &ClampSet, t: usize, i: usize) -> f64 {
    match clamps.get(i) {
        Some(Clamp::On) => return 1.0,
        Some(Clamp::Off) => return 0.0,
        _ => {}
    }
    let mut row: Vec<f64> = state.q.row(t).iter().copied().collect();
    let odds = prior_odds(state, clamps);
    let odds_row: Vec<f64> = odds.row(t).iter().copied().collect();
    let frozen: Vec<bool> = (0..row.len()).map(|k| k != i).collect();
    let x = &data.items()[t].covariates;
    let y: Vec<f64> = data.targets().row(t).iter().copied().collect();
    match (state.kind, &state.model) {
        (ModelKind::LinearExact, ObservationModel::Linear(lin)) => {
            update_row_exact(&mut row, x, &y, lin, &odds_row, &frozen)
        }
        _ => update_row_mode(&mut row, x, &y, &state.model, &odds_row, &frozen),
    }
    row[i]
}

/// One pass over all cells, ascending feature index within each item.
pub fn sweep(data: &Dataset, state: &mut ModelState, clamps: &ClampSet, parallel: bool) {
    let n_f = state.n_features();
    clamps.validate(n_f);
    if n_f == 0 {
        return;
    }
    let odds = prior_odds(state, clamps);
    let frozen: Vec<bool> = (0..n_f)
        .map(|i| matches!(clamps.get(i), Some(Clamp::On | Clamp::Off)))
        .collect();
    for i in 0..n_f {
        match clamps.get(i) {
            Some(Clamp::On) => state.q.column_mut(i).fill(1.0),
            Some(Clamp::Off) => state.q.column_mut(i).fill(0.0),
            _ => {}
        }
    }
    let y = data.targets();
    let model = &state.model;
    let exact = match (state.kind, model) {
        (ModelKind::LinearExact, ObservationModel::Linear(lin)) => Some(lin),
        _ => None,
    };
    let q = &state.q;
    let update = |t: usize| -> Vec<f64> {
        let mut row: Vec<f64> = q.row(t).iter().copied().collect();
        let odds_row: Vec<f64> = odds.row(t).iter().copied().collect();
        let yt: Vec<f64> = y.row(t).iter().copied().collect();
        let x = &data.items()[t].covariates;
        match exact {
            Some(lin) => update_row_exact(&mut row, x, &yt, lin, &odds_row, &frozen),
            None => update_row_mode(&mut row, x, &yt, model, &odds_row, &frozen),
        }
        row
    };
    let rows: Vec<Vec<f64>> = if parallel {
        (0..data.len()).into_par_iter().map(update).collect()
    } else {
        (0..data.len()).map(update).collect()
    };
    for (t, row) in rows.into_iter().enumerate() {
        for (i, v) in row.into_iter().enumerate() {
            state.q[(t, i)] = v;
        }
    }
}

/// Refits the observation model: closed form on the posterior for the exact path, point
/// fit on the posterior mode otherwise.
pub fn mstep(data: &Dataset, state: &mut ModelState) {
    let covariates = covariate_matrix(data);
    match state.kind {
        ModelKind::LinearExact => {
            state.model = ObservationModel::Linear(linear_mstep(&state.q, &covariates, data.targets(), true));
        }
        _ => {
            let design = design_matrix(&mode_values(&state.q), &covariates);
            state.model.fit_map(&design, data.targets());
        }
    }
}

/// Re-estimates error rates for every feature without a clamp.
pub fn update_rates(state: &mut ModelState, clamps: &ClampSet) {
    let rates = update_error_rates(&state.q, state.features.judgments());
    for (i, p) in rates.into_iter().enumerate() {
        if clamps.contains(i) {
            if clamps.get(i) == Some(Clamp::Decoupled) {
                state.features.set_error_rate(i, ERROR_RATE_CAP);
            }
        } else {
            state.features.set_error_rate(i, p);
        }
    }
}

/// Sweep, M-step, error-rate update.
pub fn em_iteration(data: &Dataset, state: &mut ModelState, clamps: &ClampSet, parallel: bool) -> BoundSummary {
    sweep(data, state, clamps, parallel);
    mstep(data, state);
    update_rates(state, clamps);
    compute_bound(data, state).summary(state.n_features())
}

/// Runs up to `iterations` EM iterations and returns the bound after each.
pub fn run_em(
    data: &Dataset,
    state: &mut ModelState,
    clamps: &ClampSet,
    iterations: usize,
    cfg: &InferenceConfig,
) -> Vec<BoundSummary> {
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let s = em_iteration(data, state, clamps, cfg.parallel);
        let stalled = match (cfg.early_stop, trace.last()) {
            (Some(eps), Some(prev)) => {
                let prev: &BoundSummary = prev;
                (s.l - prev.l).abs() < eps
            }
            _ => false,
        };
        trace.push(s);
        if stalled {
            break;
        }
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::integer_dataset;
    use crate::oracle::{FeatureDescriptor, OracleJudgments};
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmoid_is_overflow_safe() {
        assert_eq!(sigmoid(1e6), 1.0);
        assert_eq!(sigmoid(-1e6), (-500f64).exp() / (1.0 + (-500f64).exp()));
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn mode_ties_go_to_zero() {
        let q = DMatrix::from_row_slice(1, 3, &[0.7, 0.5, 0.49999]);
        assert_eq!(mode(&q), DMatrix::from_row_slice(1, 3, &[true, false, false]));
    }

    fn one_feature(h: Vec<bool>, p: f64) -> FeatureSet {
        let n = h.len();
        FeatureSet::new(vec![FeatureDescriptor::new("f")], vec![p], OracleJudgments::from_columns(n, vec![h])).unwrap()
    }

    /// Observation terms cancel when the feature has zero weight.
    fn flat_state(data: &Dataset, fs: FeatureSet, kind: ModelKind) -> ModelState {
        let mut s = ModelState::with_features(data, fs, kind, &MlpConfig::default());
        if let ObservationModel::Linear(lin) = &mut s.model {
            lin.lambda[(0, 0)] = 0.0;
        }
        s
    }

    #[test]
    fn prior_only_updates() {
        let data = integer_dataset(4);
        for kind in [ModelKind::LinearExact, ModelKind::LinearGeneric] {
            let s = flat_state(&data, one_feature(vec![true; 4], 0.5), kind);
            assert_eq!(update_q_cell(&data, &s, &ClampSet::none(), 0, 0), 0.5);
            let s = flat_state(&data, one_feature(vec![true; 4], 0.1), kind);
            assert_abs_diff_eq!(update_q_cell(&data, &s, &ClampSet::none(), 0, 0), 0.9, epsilon = 1e-12);
        }
    }

    #[test]
    fn hard_clamps_are_honored() {
        let data = integer_dataset(16);
        let mut s = ModelState::with_features(&data, one_feature(vec![true; 16], 0.2), ModelKind::LinearExact, &MlpConfig::default());
        sweep(&data, &mut s, &ClampSet::single(0, Clamp::Off), false);
        assert!(s.q.iter().all(|&v| v == 0.0));
        sweep(&data, &mut s, &ClampSet::single(0, Clamp::On), false);
        assert!(s.q.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_feature_set_uses_covariates_only() {
        let data = integer_dataset(8);
        let mut s = ModelState::new(&data, ModelKind::LinearExact, &MlpConfig::default());
        sweep(&data, &mut s, &ClampSet::none(), true);
        assert_eq!(s.q.shape(), (8, 0));
        let lin = s.model.as_linear().unwrap();
        assert_abs_diff_eq!(lin.lambda[(0, 0)], 3.5, epsilon = 1e-12);
    }

    #[test]
    fn half_posteriors_and_rates_cancel() {
        let data = integer_dataset(8);
        let mut s = ModelState::with_features(&data, one_feature(vec![false; 8], 0.5), ModelKind::LinearExact, &MlpConfig::default());
        s.q.fill(0.5);
        let b = compute_bound(&data, &s);
        assert_abs_diff_eq!(b.t2.sum() + b.t3.sum(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn parallel_and_serial_sweeps_agree() {
        let data = integer_dataset(64);
        let h: Vec<bool> = (0..64).map(|t| t % 3 == 0).collect();
        for kind in [ModelKind::LinearExact, ModelKind::LinearGeneric] {
            let base = ModelState::with_features(&data, one_feature(h.clone(), 0.2), kind, &MlpConfig::default());
            let (mut a, mut b) = (base.clone(), base);
            for _ in 0..3 {
                em_iteration(&data, &mut a, &ClampSet::none(), true);
                em_iteration(&data, &mut b, &ClampSet::none(), false);
            }
            assert_eq!(a, b);
        }
    }
}
