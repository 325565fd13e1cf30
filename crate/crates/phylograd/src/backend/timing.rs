//! Per-kernel timing rows.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KernelTiming {
    pub name: String,
    pub calls: u64,
    pub ns_total: u64,
    pub ns_per_call: u64,
    pub percent: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub kernels: Vec<KernelTiming>,
}

impl TimingReport {
    pub fn kernel(&self, name: &str) -> Option<&KernelTiming> {
        self.kernels.iter().find(|k| k.name == name)
    }
}
