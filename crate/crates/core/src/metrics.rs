use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coldstart::cosine_similarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Median over all entries of `|prediction - target|`. Lower is better.
    MedianAbsError,
    /// Mean over items of the cosine between predicted and true target rows. Higher is better.
    CosineSimilarity,
}

impl Metric {
    pub fn evaluate(self, predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
        match self {
            Metric::MedianAbsError => median_abs_error(predictions, targets),
            Metric::CosineSimilarity => mean_cosine_similarity(predictions, targets),
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::CosineSimilarity
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "median_abs_error" => Ok(Metric::MedianAbsError),
            "cosine_similarity" => Ok(Metric::CosineSimilarity),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn median_abs_error(predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
    assert_eq!(predictions.shape(), targets.shape());
    let mut errors: Vec<f64> = predictions.iter().zip(targets.iter()).map(|(p, y)| (p - y).abs()).collect();
    median(&mut errors)
}

pub fn mean_cosine_similarity(predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
    assert_eq!(predictions.shape(), targets.shape());
    let n = predictions.nrows();
    if n == 0 {
        return f64::NAN;
    }
    (0..n)
        .map(|t| {
            let p: Vec<f64> = predictions.row(t).iter().copied().collect();
            let y: Vec<f64> = targets.row(t).iter().copied().collect();
            cosine_similarity(&p, &y)
        })
        .sum::<f64>()
        / n as f64
}

/// Median relative error implied by a median absolute error on a log scale.
pub fn relative_error_from_log_mae(mae: f64) -> f64 {
    mae.exp() - 1.0
}
