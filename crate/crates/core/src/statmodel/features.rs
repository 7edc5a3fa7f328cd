//! Feature likelihoods and the feature-side bound terms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{FeatureDescriptor, OracleJudgments};

/// Lower clamp on error rates; the upper clamp is 0.5.
pub const ERROR_RATE_FLOOR: f64 = 1e-6;
pub const ERROR_RATE_CAP: f64 = 0.5;

/// `q[(t, i)] = q(z_i = 1)` for item `t`.
pub type PosteriorMatrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    descriptors: Vec<FeatureDescriptor>,
    error_rates: Vec<f64>,
    judgments: OracleJudgments,
}

impl FeatureSet {
    pub fn empty(items: usize) -> Self {
        Self {
            descriptors: Vec::new(),
            error_rates: Vec::new(),
            judgments: OracleJudgments::empty(items),
        }
    }

    pub fn new(
        descriptors: Vec<FeatureDescriptor>,
        error_rates: Vec<f64>,
        judgments: OracleJudgments,
    ) -> Result<Self> {
        let fs = Self {
            descriptors,
            error_rates,
            judgments,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.descriptors.len();
        if self.error_rates.len() != n || self.judgments.cols() != n {
            return Err(Error::Shape(format!(
                "{} descriptors, {} error rates, {} judgment columns",
                n,
                self.error_rates.len(),
                self.judgments.cols()
            )));
        }
        if let Some(p) = self.error_rates.iter().find(|p| !(0.0..=ERROR_RATE_CAP).contains(*p)) {
            return Err(Error::Validation(format!("error rate {p} outside [0, 0.5]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn items(&self) -> usize {
        self.judgments.rows()
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn error_rates(&self) -> &[f64] {
        &self.error_rates
    }

    pub fn judgments(&self) -> &OracleJudgments {
        &self.judgments
    }

    pub fn contains(&self, descriptor: &FeatureDescriptor) -> bool {
        self.descriptors.iter().any(|d| d.text().trim() == descriptor.text().trim())
    }

    pub fn push(&mut self, descriptor: FeatureDescriptor, column: Vec<bool>, error_rate: f64) {
        self.descriptors.push(descriptor);
        self.error_rates.push(error_rate);
        self.judgments.push_column(column);
    }

    pub fn replace(&mut self, i: usize, descriptor: FeatureDescriptor, column: Vec<bool>) {
        self.descriptors[i] = descriptor;
        self.judgments.set_column(i, column);
    }

    pub fn remove(&mut self, i: usize) -> FeatureDescriptor {
        self.error_rates.remove(i);
        self.judgments.remove_column(i);
        self.descriptors.remove(i)
    }

    pub fn set_error_rate(&mut self, i: usize, p: f64) {
        self.error_rates[i] = p;
    }

    pub fn activation(&self, i: usize) -> f64 {
        self.judgments.activation(i)
    }

    /// Judgments as a 0/1 matrix, items × features.
    pub fn judgment_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.items(), self.len(), |t, i| {
            f64::from(u8::from(self.judgments.get(t, i)))
        })
    }
}

/// Per-cell `ln p(z_i = 1 | s)` and `ln p(z_i = 0 | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLogLik {
    pub ell1: DMatrix<f64>,
    pub ell0: DMatrix<f64>,
}

impl FeatureLogLik {
    /// `ell1 - ell0`, the prior log-odds that feature `i` is on for item `t`.
    pub fn log_odds(&self, t: usize, i: usize) -> f64 {
        self.ell1[(t, i)] - self.ell0[(t, i)]
    }
}

fn clamp_rate(p: f64) -> f64 {
    p.clamp(ERROR_RATE_FLOOR, 1.0 - ERROR_RATE_FLOOR)
}

pub fn feature_loglik(fs: &FeatureSet) -> FeatureLogLik {
    let (rows, cols) = (fs.items(), fs.len());
    let mut ell1 = DMatrix::zeros(rows, cols);
    let mut ell0 = DMatrix::zeros(rows, cols);
    for i in 0..cols {
        let p = clamp_rate(fs.error_rates[i]);
        let (agree, disagree) = ((1.0 - p).ln(), p.ln());
        for t in 0..rows {
            let (a, b) = if fs.judgments.get(t, i) {
                (agree, disagree)
            } else {
                (disagree, agree)
            };
            ell1[(t, i)] = a;
            ell0[(t, i)] = b;
        }
    }
    FeatureLogLik { ell1, ell0 }
}

/// Expected feature log-likelihood per item.
pub fn term_t2(q: &PosteriorMatrix, ll: &FeatureLogLik) -> DVector<f64> {
    DVector::from_fn(q.nrows(), |t, _| {
        (0..q.ncols())
            .map(|i| q[(t, i)] * ll.ell1[(t, i)] + (1.0 - q[(t, i)]) * ll.ell0[(t, i)])
            .sum()
    })
}

/// Entropy of a Bernoulli(q) in nats, with `0 ln 0 = 0`.
pub fn bernoulli_entropy(q: f64) -> f64 {
    let xlogx = |x: f64| if x <= 0.0 { 0.0 } else { x * x.ln() };
    -(xlogx(q) + xlogx(1.0 - q))
}

/// Entropy of the factorized posterior per item.
pub fn term_t3(q: &PosteriorMatrix) -> DVector<f64> {
    DVector::from_fn(q.nrows(), |t, _| {
        (0..q.ncols()).map(|i| bernoulli_entropy(q[(t, i)])).sum()
    })
}

/// Unclamped maximizer of the feature term: mean posterior disagreement with the oracle.
pub fn raw_error_rates(q: &PosteriorMatrix, h: &OracleJudgments) -> Vec<f64> {
    let rows = q.nrows();
    (0..q.ncols())
        .map(|i| {
            if rows == 0 {
                return ERROR_RATE_CAP;
            }
            let total: f64 = (0..rows)
                .map(|t| if h.get(t, i) { 1.0 - q[(t, i)] } else { q[(t, i)] })
                .sum();
            total / rows as f64
        })
        .collect()
}

pub fn update_error_rates(q: &PosteriorMatrix, h: &OracleJudgments) -> Vec<f64> {
    raw_error_rates(q, h)
        .into_iter()
        .map(|p| p.clamp(ERROR_RATE_FLOOR, ERROR_RATE_CAP))
        .collect()
}
