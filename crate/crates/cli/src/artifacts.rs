//! On-disk wrappers that echo the effective config next to each result.

use runreid_core::evaluator::SweepResult;
use runreid_core::{EvalReport, SimilarityMatrix};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// `similarity.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
    #[serde(flatten)]
    pub matrix: SimilarityMatrix,
}

/// `eval.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalDoc {
    pub config: Value,
    pub protocol: String,
    pub method_tag: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// `sweep.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepDoc {
    pub config: Value,
    pub embedding: String,
    pub metric: String,
    #[serde(flatten)]
    pub result: SweepResult,
}
