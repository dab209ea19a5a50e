//! Shared report types for hypothesis checks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Standard error too large relative to the threshold: the data cannot
    /// distinguish pass from fail. Distinct from `Fail` because almost-sure
    /// statements cannot fail from sampling noise alone.
    Inconclusive,
}

/// One diagnostic row: a value at horizon n against its bound/threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub n: u64,
    pub value: f64,
    pub bound: f64,
}

/// Outcome of a single condition check, reproducible from (params, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub id: String,
    pub params: serde_json::Value,
    pub diagnostics: Vec<DiagnosticRow>,
    pub verdict: Verdict,
    /// Human-readable summary of what decided the verdict.
    pub note: String,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}
