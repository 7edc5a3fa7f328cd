//! Probabilistic pieces of the hybrid model: the feature likelihood `p(z | s)` given oracle
//! judgments and error rates, the bound terms that depend only on it, and the observation
//! models `p(y | z, x)` with their parameter updates.

mod features;
mod linear;
mod nonlinear;
mod observation;

pub use features::{
    bernoulli_entropy, feature_loglik, raw_error_rates, term_t2, term_t3, update_error_rates,
    FeatureLogLik, FeatureSet, PosteriorMatrix, ERROR_RATE_CAP, ERROR_RATE_FLOOR,
};
pub use linear::{
    design_matrix, linear_expectations, linear_mstep, linear_t1_exact, solve_normal_equations,
    LinearModel, VARIANCE_FLOOR,
};
pub use nonlinear::{MlpConfig, NonlinearModel};
pub use observation::{gaussian_loglik, ModelKind, ObservationModel};
