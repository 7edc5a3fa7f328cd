use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::linear::LinearModel;
use super::nonlinear::{MlpConfig, NonlinearModel};

/// Which observation model to use, and for the linear one whether the E-step uses
/// closed-form expectations or evaluates at the posterior mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    LinearExact,
    LinearGeneric,
    Nonlinear,
}

impl ModelKind {
    pub fn is_exact(self) -> bool {
        self == ModelKind::LinearExact
    }

    pub fn build(self, inputs: usize, outputs: usize, mlp: &MlpConfig) -> ObservationModel {
        match self {
            ModelKind::LinearExact => ObservationModel::Linear(LinearModel::zeros(outputs, inputs, true)),
            ModelKind::LinearGeneric => ObservationModel::Linear(LinearModel::zeros(outputs, inputs, false)),
            ModelKind::Nonlinear => ObservationModel::Nonlinear(NonlinearModel::new(inputs, outputs, mlp.clone())),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear_exact" => Ok(ModelKind::LinearExact),
            "linear_generic" => Ok(ModelKind::LinearGeneric),
            "nonlinear" => Ok(ModelKind::Nonlinear),
            other => Err(format!(
                "unknown model `{other}` (expected linear_exact, linear_generic or nonlinear)"
            )),
        }
    }
}

/// `p(y | z, x) = N(y; f([z; x]), diag σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationModel {
    Linear(LinearModel),
    Nonlinear(NonlinearModel),
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_loglik(y: &[f64], mean: &DVector<f64>, var: &DVector<f64>) -> f64 {
    y.iter()
        .enumerate()
        .map(|(d, &yd)| {
            let r = yd - mean[d];
            -0.5 * r * r / var[d] - 0.5 * (2.0 * std::f64::consts::PI * var[d]).ln()
        })
        .sum()
}

impl ObservationModel {
    pub fn inputs(&self) -> usize {
        match self {
            ObservationModel::Linear(m) => m.inputs(),
            ObservationModel::Nonlinear(m) => m.inputs(),
        }
    }

    pub fn predict(&self, input: &[f64]) -> DVector<f64> {
        match self {
            ObservationModel::Linear(m) => m.predict(input),
            ObservationModel::Nonlinear(m) => m.predict(input),
        }
    }

    pub fn predict_rows(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ObservationModel::Linear(m) => inputs * m.lambda.transpose(),
            ObservationModel::Nonlinear(m) => m.predict_rows(inputs),
        }
    }

    pub fn variances(&self) -> &DVector<f64> {
        match self {
            ObservationModel::Linear(m) => &m.sigma2,
            ObservationModel::Nonlinear(m) => &m.sigma2,
        }
    }

    pub fn as_linear(&self) -> Option<&LinearModel> {
        match self {
            ObservationModel::Linear(m) => Some(m),
            ObservationModel::Nonlinear(_) => None,
        }
    }

    /// `ln p(y | input)` at a single point.
    pub fn obs_loglik_at(&self, input: &[f64], y: &[f64]) -> f64 {
        gaussian_loglik(y, &self.predict(input), self.variances())
    }

    /// Squared residual scaled by the variances: `(y - f)ᵀ Σ⁻¹ (y - f)`.
    pub fn mahalanobis(&self, input: &[f64], y: &[f64]) -> f64 {
        let pred = self.predict(input);
        let var = self.variances();
        y.iter().enumerate().map(|(d, &yd)| (yd - pred[d]).powi(2) / var[d]).sum()
    }

    /// Adds a feature input at `at`. Linear weights for it point in a random direction with
    /// Mahalanobis length `sqrt(n_d)` (one standard deviation per output on average), so the
    /// new feature starts well away from the symmetric point `w = 0`.
    pub fn insert_feature(&mut self, at: usize, rng: &mut impl Rng) {
        match self {
            ObservationModel::Linear(m) => {
                let n_d = m.outputs();
                let mut g: Vec<f64> = (0..n_d).map(|_| StandardNormal.sample(rng)).collect();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                for (d, v) in g.iter_mut().enumerate() {
                    *v *= m.sigma2[d].sqrt() * (n_d as f64).sqrt() / norm;
                }
                m.lambda = m.lambda.clone().insert_column(at, 0.0);
                m.lambda.set_column(at, &DVector::from_vec(g));
            }
            ObservationModel::Nonlinear(m) => m.insert_input(at, rng),
        }
    }

    pub fn remove_feature(&mut self, at: usize) {
        match self {
            ObservationModel::Linear(m) => m.lambda = m.lambda.clone().remove_column(at),
            ObservationModel::Nonlinear(m) => m.remove_input(at),
        }
    }

    /// Maximizes `Σ_t ln p(y_t | input_t)` given point inputs (items × inputs).
    pub fn fit_map(&mut self, inputs: &DMatrix<f64>, y: &DMatrix<f64>) {
        match self {
            ObservationModel::Linear(m) => m.fit_least_squares(inputs, y),
            ObservationModel::Nonlinear(m) => m.fit(inputs, y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_residual_leaves_normalizer() {
        let m = ObservationModel::Linear(LinearModel {
            lambda: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]),
            sigma2: DVector::from_vec(vec![0.5, 2.0]),
            isotropic: false,
        });
        let input = [1.0, 1.0];
        let y: Vec<f64> = m.predict(&input).iter().copied().collect();
        let want = -0.5 * ((2.0 * std::f64::consts::PI).powi(2) * 0.5 * 2.0).ln();
        assert_abs_diff_eq!(m.obs_loglik_at(&input, &y), want, epsilon = 1e-12);
    }

    #[test]
    fn residual_two_unit_variance() {
        let m = ObservationModel::Linear(LinearModel::zeros(1, 1, true));
        let want = -2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(m.obs_loglik_at(&[0.0], &[2.0]), want, epsilon = 1e-12);
    }

    #[test]
    fn matches_an_independent_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let lambda = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-3.0..3.0));
            let sigma2 = DVector::from_fn(2, |_, _| rng.random_range(0.1..4.0));
            let m = ObservationModel::Linear(LinearModel {
                lambda: lambda.clone(),
                sigma2: sigma2.clone(),
                isotropic: false,
            });
            let z: Vec<f64> = (0..4).map(|k| if k == 3 { 1.0 } else { f64::from(u8::from(rng.random::<bool>())) }).collect();
            let y = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            // Density of the 2-D Gaussian via determinant and quadratic form.
            let mean = &lambda * DVector::from_column_slice(&z);
            let cov = DMatrix::from_diagonal(&sigma2);
            let r = DVector::from_column_slice(&y) - mean;
            let quad = (r.transpose() * cov.clone().try_inverse().unwrap() * &r)[0];
            let density = (-0.5 * quad).exp()
                / ((2.0 * std::f64::consts::PI).powi(2) * cov.determinant()).sqrt();
            assert_abs_diff_eq!(m.obs_loglik_at(&z, &y), density.ln(), epsilon = 1e-10);
        }
    }

    #[test]
    fn insert_then_remove_restores_linear_weights() {
        let mut m = ModelKind::LinearGeneric.build(2, 1, &MlpConfig::default());
        if let ObservationModel::Linear(l) = &mut m {
            l.lambda = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        }
        let before = m.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.insert_feature(1, &mut rng);
        assert_eq!(m.inputs(), 3);
        m.remove_feature(1);
        assert_eq!(m, before);
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("nonlinear".parse::<ModelKind>().unwrap(), ModelKind::Nonlinear);
        assert!("quadratic".parse::<ModelKind>().is_err());
    }
}
