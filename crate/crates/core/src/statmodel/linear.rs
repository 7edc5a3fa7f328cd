//! Linear-Gaussian observation model `y ~ N(Λ [z; x], diag σ²)` and its exact EM updates
//! under a factorized Bernoulli posterior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Smallest variance any fitted model reports.
pub const VARIANCE_FLOOR: f64 = 1e-8;

const RIDGE_SCALE: f64 = 1e-8;
const MIN_PIVOT_RATIO: f64 = 1e-7;

/// Inputs are ordered features first, then covariates (the first covariate is normally
/// the constant 1 and plays the role of the bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub lambda: DMatrix<f64>,
    pub sigma2: DVector<f64>,
    /// One shared variance for all outputs instead of one per output.
    pub isotropic: bool,
}

impl LinearModel {
    pub fn zeros(outputs: usize, inputs: usize, isotropic: bool) -> Self {
        Self {
            lambda: DMatrix::zeros(outputs, inputs),
            sigma2: DVector::from_element(outputs, 1.0),
            isotropic,
        }
    }

    pub fn inputs(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn predict(&self, input: &[f64]) -> DVector<f64> {
        &self.lambda * DVector::from_column_slice(input)
    }

    /// Ordinary least squares on an input matrix (items × inputs), then residual variances.
    pub fn fit_least_squares(&mut self, inputs: &DMatrix<f64>, y: &DMatrix<f64>) {
        let gram = inputs.transpose() * inputs;
        let rhs = inputs.transpose() * y;
        self.lambda = solve_normal_equations(&gram, &rhs).transpose();
        let residual = y - inputs * self.lambda.transpose();
        let zero = DVector::zeros(inputs.ncols());
        self.sigma2 = residual_variances(&residual, &self.lambda, &zero, self.isotropic);
    }
}

/// Solves `gram · x = rhs` for symmetric positive semi-definite `gram`. A singular or badly
/// conditioned system gets a small ridge and a logged warning.
pub fn solve_normal_equations(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows();
    if n == 0 {
        return DMatrix::zeros(0, rhs.ncols());
    }
    if let Some(chol) = gram.clone().cholesky() {
        let d = chol.l_dirty().diagonal();
        let (lo, hi) = (d.min(), d.max());
        if lo > 0.0 && lo / hi >= MIN_PIVOT_RATIO {
            return chol.solve(rhs);
        }
    }
    let scale = gram.diagonal().mean().abs().max(1.0);
    let ridge = RIDGE_SCALE * scale;
    log::warn!("normal equations singular or ill-conditioned; adding ridge {ridge:.3e}");
    let regularized = gram + DMatrix::identity(n, n) * ridge;
    match regularized.clone().cholesky() {
        Some(chol) => chol.solve(rhs),
        None => regularized
            .svd(true, true)
            .solve(rhs, 1e-12)
            .expect("SVD with both factors computed"),
    }
}

/// Per-output (or pooled) residual variance including the posterior-variance correction
/// `Σ_i v_i Λ_{d,i}²`, where `v` holds summed Bernoulli variances per input.
fn residual_variances(
    residual: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    summed_var: &DVector<f64>,
    isotropic: bool,
) -> DVector<f64> {
    let items = residual.nrows().max(1) as f64;
    let outputs = lambda.nrows();
    let per_output: Vec<f64> = (0..outputs)
        .map(|d| {
            let fit = residual.column(d).norm_squared();
            let spread: f64 = (0..lambda.ncols())
                .map(|i| summed_var[i] * lambda[(d, i)].powi(2))
                .sum();
            fit + spread
        })
        .collect();
    if isotropic {
        let pooled = per_output.iter().sum::<f64>() / (items * outputs.max(1) as f64);
        DVector::from_element(outputs, pooled.max(VARIANCE_FLOOR))
    } else {
        DVector::from_iterator(
            outputs,
            per_output.into_iter().map(|s| (s / items).max(VARIANCE_FLOOR)),
        )
    }
}

/// Posterior mean and second moment of `[z; x]` when `z_i ~ Bernoulli(q_i)` independently
/// and the covariates `x` are fixed.
pub fn linear_expectations(q: &[f64], covariates: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let mean = DVector::from_iterator(q.len() + covariates.len(), q.iter().chain(covariates).copied());
    let mut second = &mean * mean.transpose();
    for (i, &qi) in q.iter().enumerate() {
        second[(i, i)] += qi - qi * qi;
    }
    (mean, second)
}

/// `E_q[ln N(y; Λ [z; x], diag σ²)]` in closed form.
pub fn linear_t1_exact(q: &[f64], covariates: &[f64], y: &[f64], model: &LinearModel) -> f64 {
    let input: Vec<f64> = q.iter().chain(covariates).copied().collect();
    let pred = model.predict(&input);
    let mut total = 0.0;
    for d in 0..model.outputs() {
        let s2 = model.sigma2[d];
        let r = y[d] - pred[d];
        let spread: f64 = q
            .iter()
            .enumerate()
            .map(|(i, &qi)| (qi - qi * qi) * model.lambda[(d, i)].powi(2))
            .sum();
        total += -(r * r + spread) / (2.0 * s2) - 0.5 * (2.0 * std::f64::consts::PI * s2).ln();
    }
    total
}

/// Concatenates the posterior and covariates into the item × input design matrix.
pub fn design_matrix(q: &DMatrix<f64>, covariates: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, nf, nx) = (q.nrows(), q.ncols(), covariates.ncols());
    DMatrix::from_fn(t, nf + nx, |r, c| if c < nf { q[(r, c)] } else { covariates[(r, c - nf)] })
}

/// Closed-form maximizer of `Σ_t E_q[ln p(y_t | z_t)]` over `Λ`, then over the variances.
pub fn linear_mstep(
    q: &DMatrix<f64>,
    covariates: &DMatrix<f64>,
    y: &DMatrix<f64>,
    isotropic: bool,
) -> LinearModel {
    let design = design_matrix(q, covariates);
    let width = design.ncols();
    let mut summed_var = DVector::zeros(width);
    for i in 0..q.ncols() {
        summed_var[i] = q.column(i).iter().map(|&v| v - v * v).sum();
    }
    let gram = design.transpose() * &design + DMatrix::from_diagonal(&summed_var);
    let rhs = design.transpose() * y;
    let lambda = solve_normal_equations(&gram, &rhs).transpose();
    let residual = y - &design * lambda.transpose();
    let sigma2 = residual_variances(&residual, &lambda, &summed_var, isotropic);
    LinearModel {
        lambda,
        sigma2,
        isotropic,
    }
}
