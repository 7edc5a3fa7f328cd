//! The semantic side of the hybrid model.
//!
//! An [`Oracle`] answers three kinds of questions about semantic items: does a feature
//! descriptor apply to an item (`extract`), what characteristic separates a positive group
//! of items from a negative one (`mine`), and which characteristics look useful for a task
//! (`propose_zero_shot`). Three backends implement it:
//!
//! * [`SyntheticOracle`]: integer items and an exhaustive rule grammar, no model involved.
//! * [`LlmOracle`] over [`HttpTransport`]: a chat-completion endpoint, optionally recording
//!   every exchange to a JSON-lines transcript.
//! * [`LlmOracle`] over [`ReplayTransport`]: answers from a recorded transcript.

mod llm;
pub mod mock;
mod prompt;
mod synthetic;
mod transport;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SemanticItem;

pub use llm::{parse_json_object, LlmOracle, LlmOracleConfig};
pub use prompt::{format_item_list, PromptTemplates};
pub use synthetic::{IntRule, SyntheticOracle};
pub use transport::{
    request_hash, ChatRequest, ChatTransport, HttpTransport, RecordingTransport,
    ReplayTransport, TranscriptEntry, TranscriptWriter,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    #[error("oracle request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed oracle response: {0}")]
    Malformed(String),
    #[error("operation not supported by the {0} backend")]
    Unsupported(&'static str),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl OracleError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, OracleError::Timeout | OracleError::Transport(_))
    }
}

/// A natural-language yes/no characteristic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureDescriptor(String);

impl FeatureDescriptor {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Binary judgments `h[t][i]`, stored by feature column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleJudgments {
    rows: usize,
    columns: Vec<Vec<bool>>,
}

impl OracleJudgments {
    pub fn empty(rows: usize) -> Self {
        Self {
            rows,
            columns: Vec::new(),
        }
    }

    pub fn from_columns(rows: usize, columns: Vec<Vec<bool>>) -> Self {
        assert!(columns.iter().all(|c| c.len() == rows), "ragged judgment columns");
        Self { rows, columns }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, t: usize, i: usize) -> bool {
        self.columns[i][t]
    }

    pub fn column(&self, i: usize) -> &[bool] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<bool>] {
        &self.columns
    }

    pub fn row(&self, t: usize) -> Vec<bool> {
        self.columns.iter().map(|c| c[t]).collect()
    }

    pub fn push_column(&mut self, column: Vec<bool>) {
        assert_eq!(column.len(), self.rows);
        self.columns.push(column);
    }

    pub fn set_column(&mut self, i: usize, column: Vec<bool>) {
        assert_eq!(column.len(), self.rows);
        self.columns[i] = column;
    }

    pub fn remove_column(&mut self, i: usize) -> Vec<bool> {
        self.columns.remove(i)
    }

    /// Fraction of items for which feature `i` is on.
    pub fn activation(&self, i: usize) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        self.columns[i].iter().filter(|&&b| b).count() as f64 / self.rows as f64
    }
}

#[derive(Debug, Clone)]
pub struct MiningRequest {
    pub positives: Vec<SemanticItem>,
    pub negatives: Vec<SemanticItem>,
}

impl MiningRequest {
    pub fn new(positives: Vec<SemanticItem>, negatives: Vec<SemanticItem>) -> Result<Self, OracleError> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(OracleError::InvalidRequest(
                "both exemplar groups must be non-empty".into(),
            ));
        }
        if let Some(dup) = positives
            .iter()
            .find(|p| negatives.iter().any(|n| n.id == p.id))
        {
            return Err(OracleError::InvalidRequest(format!(
                "item `{}` is in both groups",
                dup.id
            )));
        }
        Ok(Self {
            positives,
            negatives,
        })
    }
}

pub trait Oracle: Send + Sync {
    fn name(&self) -> &'static str;

    fn extract(&self, item: &SemanticItem, descriptor: &FeatureDescriptor) -> Result<bool, OracleError>;

    fn extract_batch(
        &self,
        items: &[SemanticItem],
        descriptor: &FeatureDescriptor,
    ) -> Result<Vec<bool>, OracleError> {
        items.iter().map(|it| self.extract(it, descriptor)).collect()
    }

    fn mine(&self, request: &MiningRequest) -> Result<FeatureDescriptor, OracleError>;

    fn propose_zero_shot(
        &self,
        items: &[SemanticItem],
        task_description: &str,
        n: usize,
    ) -> Result<Vec<FeatureDescriptor>, OracleError>;
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn name(&self) -> &'static str {
        (**self).name()
    }

    fn extract(&self, item: &SemanticItem, descriptor: &FeatureDescriptor) -> Result<bool, OracleError> {
        (**self).extract(item, descriptor)
    }

    fn extract_batch(
        &self,
        items: &[SemanticItem],
        descriptor: &FeatureDescriptor,
    ) -> Result<Vec<bool>, OracleError> {
        (**self).extract_batch(items, descriptor)
    }

    fn mine(&self, request: &MiningRequest) -> Result<FeatureDescriptor, OracleError> {
        (**self).mine(request)
    }

    fn propose_zero_shot(
        &self,
        items: &[SemanticItem],
        task_description: &str,
        n: usize,
    ) -> Result<Vec<FeatureDescriptor>, OracleError> {
        (**self).propose_zero_shot(items, task_description, n)
    }
}

/// Order-preserving removal of repeated descriptors.
pub fn dedup_descriptors(descriptors: Vec<FeatureDescriptor>) -> Vec<FeatureDescriptor> {
    let mut seen = std::collections::HashSet::new();
    descriptors
        .into_iter()
        .filter(|d| !d.text().trim().is_empty() && seen.insert(d.text().trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mining_request_validation() {
        let a = SemanticItem::new("a", "x");
        let b = SemanticItem::new("b", "y");
        assert!(MiningRequest::new(vec![a.clone()], vec![]).is_err());
        assert!(MiningRequest::new(vec![a.clone()], vec![a.clone()]).is_err());
        assert!(MiningRequest::new(vec![a], vec![b]).is_ok());
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        let ds = ["a", "b", "a", " ", "c", "b"].map(FeatureDescriptor::new).to_vec();
        let out: Vec<_> = dedup_descriptors(ds).iter().map(|d| d.text().to_string()).collect();
        assert_eq!(out, ["a", "b", "c"]);
    }

    #[test]
    fn judgments_activation() {
        let j = OracleJudgments::from_columns(4, vec![vec![true, false, true, true]]);
        assert_eq!(j.activation(0), 0.75);
        assert_eq!(j.row(2), vec![true]);
    }
}
