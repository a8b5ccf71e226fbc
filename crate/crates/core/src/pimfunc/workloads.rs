//! Benchmark workload descriptors: per-kernel operation and byte counts that
//! feed the hardware estimator and the power simulator.
//!
//! Descriptors ship as JSON data files with schema
//! `{name, kernels:[{id, flops, bytes_r, bytes_w, deps}]}`; the hash and CNN
//! entries carry published estimates rather than measurements and are marked
//! as such.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{Kernel, TaskGraph};

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("unknown workload `{0}` (known: ntt32k, sha3_1088, alexnet)")]
    Unknown(String),
    #[error("descriptor data malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadDescriptor {
    pub name: String,
    #[serde(default)]
    pub notes: String,
    /// True when the counts are published estimates, not derived exactly.
    #[serde(default)]
    pub estimate: bool,
    /// Butterfly count for transform workloads (n/2 * log2 n).
    #[serde(default)]
    pub butterflies: Option<u64>,
    /// Fractional operation mix, when characterized.
    #[serde(default)]
    pub op_mix: Option<std::collections::BTreeMap<String, f64>>,
    pub kernels: Vec<Kernel>,
}

impl WorkloadDescriptor {
    pub fn total_flops(&self) -> f64 {
        self.kernels.iter().map(|k| k.flops).sum()
    }

    pub fn total_bytes(&self) -> f64 {
        self.kernels.iter().map(|k| k.bytes_r + k.bytes_w).sum()
    }

    /// A task graph skeleton with the caller's latency bound attached.
    pub fn into_task_graph(self, expected_latency_s: f64) -> TaskGraph {
        TaskGraph { expected_latency_s, kernels: self.kernels }
    }
}

const NTT32K: &str = include_str!("../../data/ntt32k.json");
const SHA3_1088: &str = include_str!("../../data/sha3_1088.json");
const ALEXNET: &str = include_str!("../../data/alexnet.json");

/// Looks up a shipped workload descriptor by name.
pub fn workload_descriptor(name: &str) -> Result<WorkloadDescriptor, WorkloadError> {
    let raw = match name {
        "ntt32k" => NTT32K,
        "sha3_1088" => SHA3_1088,
        "alexnet" => ALEXNET,
        other => return Err(WorkloadError::Unknown(other.to_string())),
    };
    serde_json::from_str(raw).map_err(|e| WorkloadError::Malformed(e.to_string()))
}
