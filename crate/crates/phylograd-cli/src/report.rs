//! Machine-readable run reports.

use phylograd::backend::{BackendConfig, TimingReport};
use serde::Serialize;

/// Self-describing report of one `loglik` or `gradient` run. With the
/// serial backend, re-running the same inputs (same digest) reproduces
/// `logLikelihood` bit for bit.
#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub inputs_digest: String,
    pub log_likelihood: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch_set_gradient: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_checks: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_column: Option<Vec<f64>>,
    pub kernel_timings: TimingReport,
    pub backend: BackendConfig,
    pub wall_time_ns: u64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// 128-bit FNV-1a content hash over the raw input texts, hex encoded.
pub fn digest_inputs(parts: &[&str]) -> String {
    const OFFSET: u128 = 0x6c62272e07bb014262b821756295c58d;
    const PRIME: u128 = 0x0000000001000000000000000000013b;
    let mut hash = OFFSET;
    for part in parts {
        for byte in part.as_bytes() {
            hash ^= *byte as u128;
            hash = hash.wrapping_mul(PRIME);
        }
        // Separator so concatenation boundaries matter.
        hash ^= 0x1f;
        hash = hash.wrapping_mul(PRIME);
    }
    format!("{hash:032x}")
}
