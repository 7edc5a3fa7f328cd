//! Interpretable semantic features learned with a language-model oracle and a statistical
//! observation model.

pub mod coldstart;
pub mod corpus;
pub mod discovery;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod oracle;
pub mod statmodel;

pub use corpus::{Dataset, SemanticItem};
pub use discovery::{DiscoveryConfig, ExpandContractResult, StopReason};
pub use error::{Error, Result};
pub use inference::{BoundSummary, InferenceConfig, ModelState};
pub use metrics::Metric;
pub use oracle::{FeatureDescriptor, Oracle, OracleError};
pub use statmodel::{FeatureSet, ModelKind, ObservationModel};
