//! Two-hidden-layer ReLU regressor trained with Adam and inverted dropout.
//!
//! Inputs that are not binary are standardized with statistics from the fitting data, and
//! outputs are standardized internally; predictions are returned in the original units.
//! Dropout is applied only while training.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linear::VARIANCE_FLOOR;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Continue from the current weights at each fit instead of re-initializing.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            dropout: 0.1,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            warm_start: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl Dense {
    fn he(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / inputs.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            w: DMatrix::from_fn(outputs, inputs, |_, _| normal.sample(rng)),
            b: DVector::zeros(outputs),
        }
    }
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Dense]) -> Self {
        let zeros: Vec<_> = layers
            .iter()
            .map(|l| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn apply(&mut self, layers: &mut [Dense], grads: &[(DMatrix<f64>, DVector<f64>)], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (k, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[k];
            let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            };
            let (mw, mb) = &mut self.m[k];
            let (vw, vb) = &mut self.v[k];
            for idx in 0..layer.w.len() {
                update(&mut layer.w[idx], &mut mw[idx], &mut vw[idx], gw[idx]);
            }
            for idx in 0..layer.b.len() {
                update(&mut layer.b[idx], &mut mb[idx], &mut vb[idx], gb[idx]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearModel {
    pub config: MlpConfig,
    layers: Vec<Dense>,
    in_mean: Vec<f64>,
    in_scale: Vec<f64>,
    out_mean: Vec<f64>,
    out_scale: Vec<f64>,
    pub sigma2: DVector<f64>,
    fits: u64,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

impl NonlinearModel {
    pub fn new(inputs: usize, outputs: usize, config: MlpConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = Self::init_layers(inputs, outputs, &config.hidden, &mut rng);
        Self {
            config,
            layers,
            in_mean: vec![0.0; inputs],
            in_scale: vec![1.0; inputs],
            out_mean: vec![0.0; outputs],
            out_scale: vec![1.0; outputs],
            sigma2: DVector::from_element(outputs, 1.0),
            fits: 0,
        }
    }

    fn init_layers(inputs: usize, outputs: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Vec<Dense> {
        let mut widths = vec![inputs];
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        widths.windows(2).map(|w| Dense::he(w[0], w[1], rng)).collect()
    }

    pub fn inputs(&self) -> usize {
        self.in_mean.len()
    }

    pub fn outputs(&self) -> usize {
        self.out_mean.len()
    }

    /// Adds an input at position `at` with freshly drawn first-layer weights.
    pub fn insert_input(&mut self, at: usize, rng: &mut impl Rng) {
        let first = &mut self.layers[0];
        let std = (2.0 / (first.w.ncols() + 1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let column: Vec<f64> = (0..first.w.nrows()).map(|_| normal.sample(rng)).collect();
        first.w = first.w.clone().insert_column(at, 0.0);
        first.w.set_column(at, &DVector::from_vec(column));
        self.in_mean.insert(at, 0.0);
        self.in_scale.insert(at, 1.0);
    }

    pub fn remove_input(&mut self, at: usize) {
        self.layers[0].w = self.layers[0].w.clone().remove_column(at);
        self.in_mean.remove(at);
        self.in_scale.remove(at);
    }

    fn standardize_inputs(&self, raw: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(raw.nrows(), raw.ncols(), |t, c| (raw[(t, c)] - self.in_mean[c]) / self.in_scale[c])
    }

    fn standardize_outputs(&self, raw: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(raw.nrows(), raw.ncols(), |t, d| (raw[(t, d)] - self.out_mean[d]) / self.out_scale[d])
    }

    /// Forward pass on standardized rows. With a dropout RNG, returns the masks used.
    fn forward(
        &self,
        x: &DMatrix<f64>,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, DMatrix<f64>) {
        let keep = 1.0 - self.config.dropout;
        let mut activations = vec![x.clone()];
        let mut masks = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let input = activations.last().expect("non-empty");
            let mut z = input * layer.w.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.b.transpose();
            }
            if k == last {
                return (activations, masks, z);
            }
            z.apply(|v| *v = relu(*v));
            if let Some(rng) = dropout.as_deref_mut() {
                let mask = DMatrix::from_fn(z.nrows(), z.ncols(), |_, _| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                z.component_mul_assign(&mask);
                masks.push(mask);
            }
            activations.push(z);
        }
        unreachable!("network has an output layer")
    }

    fn loss_weights(&self) -> Vec<f64> {
        if self.fits == 0 {
            return vec![1.0; self.outputs()];
        }
        let raw: Vec<f64> = (0..self.outputs())
            .map(|d| self.out_scale[d].powi(2) / self.sigma2[d])
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
        raw.iter().map(|w| w / mean).collect()
    }

    /// One Adam step on standardized data; returns the training loss before the step.
    fn step(
        &mut self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        weights: &[f64],
        adam: &mut Adam,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let (acts, masks, out) = self.forward(x, Some(rng));
        let n = x.nrows() as f64;
        let mut delta = DMatrix::from_fn(out.nrows(), out.ncols(), |t, d| {
            weights[d] * (out[(t, d)] - y[(t, d)]) / n
        });
        let loss = (0..out.nrows())
            .flat_map(|t| (0..out.ncols()).map(move |d| (t, d)))
            .map(|(t, d)| 0.5 * weights[d] * (out[(t, d)] - y[(t, d)]).powi(2))
            .sum::<f64>()
            / n;
        let mut grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); self.layers.len()];
        for k in (0..self.layers.len()).rev() {
            let input = &acts[k];
            grads[k] = (delta.transpose() * input, DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum())));
            if k > 0 {
                let mut back = &delta * &self.layers[k].w;
                let mask = &masks[k - 1];
                for idx in 0..back.len() {
                    // acts[k] is post-ReLU and post-dropout; zero means the unit did not pass.
                    back[idx] = if acts[k][idx] > 0.0 { back[idx] * mask[idx] } else { 0.0 };
                }
                delta = back;
            }
        }
        adam.apply(&mut self.layers, &grads, self.config.learning_rate);
        loss
    }

    fn set_standardization(&mut self, inputs: &DMatrix<f64>, y: &DMatrix<f64>) {
        let t = inputs.nrows().max(1) as f64;
        for c in 0..inputs.ncols() {
            let col = inputs.column(c);
            let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
            let mean = col.sum() / t;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
            if binary || var <= 1e-24 {
                self.in_mean[c] = 0.0;
                self.in_scale[c] = 1.0;
            } else {
                self.in_mean[c] = mean;
                self.in_scale[c] = var.sqrt();
            }
        }
        for d in 0..y.ncols() {
            let col = y.column(d);
            let mean = col.sum() / t;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
            self.out_mean[d] = mean;
            self.out_scale[d] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
    }

    /// Trains on (inputs, y) with the configured recipe, then sets the output variances to
    /// the mean squared residuals.
    pub fn fit(&mut self, inputs: &DMatrix<f64>, y: &DMatrix<f64>) {
        assert_eq!(inputs.ncols(), self.inputs(), "input width");
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ self.fits.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        if !self.config.warm_start {
            self.layers = Self::init_layers(self.inputs(), self.outputs(), &self.config.hidden, &mut rng);
        }
        self.set_standardization(inputs, y);
        let weights = self.loss_weights();
        let xs = self.standardize_inputs(inputs);
        let ys = self.standardize_outputs(y);
        let mut adam = Adam::new(&self.layers);
        let mut order: Vec<usize> = (0..inputs.nrows()).collect();
        let batch = self.config.batch_size.max(1);
        for _ in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let bx = xs.select_rows(chunk);
                let by = ys.select_rows(chunk);
                self.step(&bx, &by, &weights, &mut adam, &mut rng);
            }
        }
        self.fits += 1;
        let residual = y - self.predict_rows(inputs);
        let t = inputs.nrows().max(1) as f64;
        self.sigma2 = DVector::from_iterator(
            self.outputs(),
            residual
                .column_iter()
                .map(|c| (c.norm_squared() / t).max(VARIANCE_FLOOR)),
        );
    }

    /// Predictions for every row of a raw input matrix.
    pub fn predict_rows(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let (_, _, out) = self.forward(&self.standardize_inputs(inputs), None);
        DMatrix::from_fn(out.nrows(), out.ncols(), |t, d| out[(t, d)] * self.out_scale[d] + self.out_mean[d])
    }

    pub fn predict(&self, input: &[f64]) -> DVector<f64> {
        let row = DMatrix::from_row_slice(1, input.len(), input);
        self.predict_rows(&row).row(0).transpose()
    }

    /// Weighted half squared error on standardized outputs, dropout off.
    pub fn batch_loss(&self, inputs: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let weights = self.loss_weights();
        let (_, _, out) = self.forward(&self.standardize_inputs(inputs), None);
        let ys = self.standardize_outputs(y);
        let n = inputs.nrows().max(1) as f64;
        (0..out.nrows())
            .flat_map(|t| (0..out.ncols()).map(move |d| (t, d)))
            .map(|(t, d)| 0.5 * weights[d] * (out[(t, d)] - ys[(t, d)]).powi(2))
            .sum::<f64>()
            / n
    }

    /// A single optimizer step (fresh optimizer state, dropout on) on one batch.
    pub fn train_step(&mut self, inputs: &DMatrix<f64>, y: &DMatrix<f64>, rng: &mut ChaCha8Rng) {
        let weights = self.loss_weights();
        let xs = self.standardize_inputs(inputs);
        let ys = self.standardize_outputs(y);
        let mut adam = Adam::new(&self.layers);
        self.step(&xs, &ys, &weights, &mut adam, rng);
    }
}
