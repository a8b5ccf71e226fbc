//! Hardware estimator: roofline latency models on heterogeneous devices and
//! the iterative kernel-migration partitioning loop, composed with the energy
//! and forecasting modules into an end-to-end quote.
//!
//! Tasks are dependency graphs of kernels described by operation and byte
//! counts. Every kernel starts on the CPU; while the estimated latency
//! exceeds the requested bound, the single kernel move (to a non-CPU device)
//! with the largest latency reduction is applied, until the bound is met or
//! no move helps.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carbon::{
    self, BillingPolicy, EnergyBreakdown, HardwareUnit, NetDemandPoint, UnitUsage,
};
use crate::forecast::{ForecastError, QuantileForecast, RecurrentQuantileModel, Target};
use crate::traces::EnergyTrace;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("kernel ids must be unique, `{0}` repeats")]
    DuplicateKernel(String),
    #[error("kernel `{kernel}` depends on unknown kernel `{dep}`")]
    UnknownDependency { kernel: String, dep: String },
    #[error("dependency graph has a cycle through `{0}`")]
    Cycle(String),
    #[error("expected latency must be positive")]
    BadLatencyBound,
    #[error("device catalog must contain a CPU")]
    NoCpu,
    #[error("device kinds must be unique")]
    DuplicateDevice,
    #[error("placement is missing kernel `{0}`")]
    IncompletePlacement(String),
    #[error("traces do not cover the task window starting at {0}")]
    Coverage(i64),
    #[error("forecast failed: {0}")]
    Forecast(#[from] ForecastError),
    #[error("energy accounting failed: {0}")]
    Carbon(#[from] carbon::CarbonError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub id: String,
    pub transfer_bytes: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Kernel {
    pub id: String,
    pub flops: f64,
    pub bytes_r: f64,
    pub bytes_w: f64,
    #[serde(default)]
    pub deps: Vec<DependencyEdge>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskGraph {
    /// The QoS bound, seconds.
    pub expected_latency_s: f64,
    pub kernels: Vec<Kernel>,
}

impl TaskGraph {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// Checks id uniqueness, dependency resolution, and acyclicity.
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.expected_latency_s <= 0.0 {
            return Err(EstimatorError::BadLatencyBound);
        }
        let mut ids = BTreeSet::new();
        for k in &self.kernels {
            if !ids.insert(k.id.as_str()) {
                return Err(EstimatorError::DuplicateKernel(k.id.clone()));
            }
        }
        for k in &self.kernels {
            for d in &k.deps {
                if !ids.contains(d.id.as_str()) {
                    return Err(EstimatorError::UnknownDependency {
                        kernel: k.id.clone(),
                        dep: d.id.clone(),
                    });
                }
            }
        }
        // Kahn's algorithm; anything left over sits on a cycle.
        let mut indegree: BTreeMap<&str, usize> =
            self.kernels.iter().map(|k| (k.id.as_str(), k.deps.len())).collect();
        let mut ready: Vec<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut seen = 0;
        while let Some(id) = ready.pop() {
            seen += 1;
            for k in &self.kernels {
                if k.deps.iter().any(|d| d.id == id) {
                    let slot = indegree.get_mut(k.id.as_str()).unwrap();
                    *slot -= 1;
                    if *slot == 0 {
                        ready.push(k.id.as_str());
                    }
                }
            }
        }
        if seen != self.kernels.len() {
            let stuck = indegree.iter().find(|(_, &d)| d > 0).map(|(&id, _)| id).unwrap();
            return Err(EstimatorError::Cycle(stuck.to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DeviceKind {
    Cpu,
    Gpu,
    Pim,
}

impl std::fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DeviceKind::Cpu => write!(f, "CPU"),
            DeviceKind::Gpu => write!(f, "GPU"),
            DeviceKind::Pim => write!(f, "PIM"),
        }
    }
}

/// Performance envelope of one device class plus its energy identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub kind: DeviceKind,
    pub peak_flops: f64,
    pub mem_bandwidth: f64,
    pub host_link_bandwidth: f64,
    pub unit: HardwareUnit,
}

pub fn load_devices(json: &str) -> Result<Vec<DeviceSpec>, serde_json::Error> {
    serde_json::from_str(json)
}

fn validate_devices(devices: &[DeviceSpec]) -> Result<(), EstimatorError> {
    let kinds: BTreeSet<DeviceKind> = devices.iter().map(|d| d.kind).collect();
    if kinds.len() != devices.len() {
        return Err(EstimatorError::DuplicateDevice);
    }
    if !kinds.contains(&DeviceKind::Cpu) {
        return Err(EstimatorError::NoCpu);
    }
    Ok(())
}

/// Kernel-to-device assignment, total over the graph's kernels.
pub type Placement = BTreeMap<String, DeviceKind>;

/// Roofline latency of one kernel on one device: the slower of the compute
/// and memory ceilings.
pub fn kernel_latency(kernel: &Kernel, device: &DeviceSpec) -> f64 {
    let compute = kernel.flops / device.peak_flops;
    let memory = (kernel.bytes_r + kernel.bytes_w) / device.mem_bandwidth;
    compute.max(memory)
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyBreakdown {
    pub total_s: f64,
    /// Seconds of kernel time per device kind.
    pub per_device_s: BTreeMap<DeviceKind, f64>,
    /// Seconds spent moving data across device boundaries.
    pub transfer_s: f64,
}

/// Total latency of a placement: the sum of all kernel latencies plus
/// cross-device transfer times. Transfers ride the slower of the two
/// endpoints' host links.
pub fn estimate_latency(
    graph: &TaskGraph,
    placement: &Placement,
    devices: &[DeviceSpec],
) -> Result<LatencyBreakdown, EstimatorError> {
    graph.validate()?;
    validate_devices(devices)?;
    let by_kind: BTreeMap<DeviceKind, &DeviceSpec> = devices.iter().map(|d| (d.kind, d)).collect();
    let mut per_device_s: BTreeMap<DeviceKind, f64> = BTreeMap::new();
    let mut transfer_s = 0.0;
    for k in &graph.kernels {
        let kind = *placement
            .get(&k.id)
            .ok_or_else(|| EstimatorError::IncompletePlacement(k.id.clone()))?;
        let device = by_kind[&kind];
        *per_device_s.entry(kind).or_insert(0.0) += kernel_latency(k, device);
        for dep in &k.deps {
            let dep_kind = *placement
                .get(&dep.id)
                .ok_or_else(|| EstimatorError::IncompletePlacement(dep.id.clone()))?;
            if dep_kind != kind {
                let link = by_kind[&kind]
                    .host_link_bandwidth
                    .min(by_kind[&dep_kind].host_link_bandwidth);
                transfer_s += dep.transfer_bytes / link;
            }
        }
    }
    let total_s = per_device_s.values().sum::<f64>() + transfer_s;
    Ok(LatencyBreakdown { total_s, per_device_s, transfer_s })
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionStep {
    pub iteration: usize,
    pub moved_kernel: String,
    pub to_device: DeviceKind,
    pub latency_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionOutcome {
    pub placement: Placement,
    pub latency_s: f64,
    pub met_qos: bool,
    pub steps: Vec<PartitionStep>,
}

/// Greedy single-move hill climbing from the all-CPU placement.
///
/// Per iteration every (kernel, non-CPU device) move is scored against the
/// current placement and the largest strict reduction is applied; ties break
/// toward the lexically first kernel id, then GPU before PIM. Stops when the
/// latency bound is met or nothing improves. Iterations are capped at
/// |kernels| * |non-CPU devices|.
pub fn partition(graph: &TaskGraph, devices: &[DeviceSpec]) -> Result<PartitionOutcome, EstimatorError> {
    graph.validate()?;
    validate_devices(devices)?;
    let mut placement: Placement =
        graph.kernels.iter().map(|k| (k.id.clone(), DeviceKind::Cpu)).collect();
    let mut latency = estimate_latency(graph, &placement, devices)?.total_s;
    let mut steps = Vec::new();
    let non_cpu: Vec<DeviceKind> = {
        let mut kinds: Vec<DeviceKind> =
            devices.iter().map(|d| d.kind).filter(|&k| k != DeviceKind::Cpu).collect();
        kinds.sort();
        kinds
    };
    let max_iterations = graph.kernels.len() * non_cpu.len();

    for iteration in 1..=max_iterations {
        if latency <= graph.expected_latency_s {
            break;
        }
        let mut best: Option<(f64, &str, DeviceKind)> = None;
        for k in &graph.kernels {
            for &kind in &non_cpu {
                if placement[&k.id] == kind {
                    continue;
                }
                let mut candidate = placement.clone();
                candidate.insert(k.id.clone(), kind);
                let t = estimate_latency(graph, &candidate, devices)?.total_s;
                // Strictly better than current and than the best candidate;
                // kernel order then device order breaks exact ties.
                if t < latency && best.map(|(bt, _, _)| t < bt).unwrap_or(true) {
                    best = Some((t, &k.id, kind));
                }
            }
        }
        match best {
            Some((t, id, kind)) => {
                placement.insert(id.to_string(), kind);
                latency = t;
                steps.push(PartitionStep {
                    iteration,
                    moved_kernel: id.to_string(),
                    to_device: kind,
                    latency_s: t,
                });
            }
            None => break,
        }
    }

    Ok(PartitionOutcome {
        latency_s: latency,
        met_qos: latency <= graph.expected_latency_s,
        placement,
        steps,
    })
}

/// Everything a user sees for one submitted task.
#[derive(Debug, Clone, Serialize)]
pub struct Quote {
    pub placement: Placement,
    pub estimated_latency_s: f64,
    pub latency: LatencyBreakdown,
    pub energy: EnergyBreakdown,
    pub e_ope_j: f64,
    pub e_emb_j: f64,
    pub charge_credits: f64,
    pub met_qos: bool,
    pub partition_steps: Vec<PartitionStep>,
    pub net_demand_forecast: Option<QuantileForecast>,
}

#[derive(Debug, Clone, Copy)]
pub struct QuoteOverheads {
    pub pue: f64,
    pub delivery_loss_fraction: f64,
}

impl Default for QuoteOverheads {
    fn default() -> Self {
        Self { pue: 1.2, delivery_loss_fraction: 0.05 }
    }
}

/// End-to-end quote: partition, latency, operational + embodied energy, net
/// demand over the task window (forecast when a model is supplied, otherwise
/// measured traces), and the billed charge.
#[allow(clippy::too_many_arguments)]
pub fn ese_quote(
    graph: &TaskGraph,
    devices: &[DeviceSpec],
    start_time: i64,
    demand: &EnergyTrace,
    renewable: &EnergyTrace,
    model: Option<&RecurrentQuantileModel>,
    policy: &BillingPolicy,
    overheads: QuoteOverheads,
) -> Result<Quote, EstimatorError> {
    let outcome = partition(graph, devices)?;
    let latency = estimate_latency(graph, &outcome.placement, devices)?;
    let by_kind: BTreeMap<DeviceKind, &DeviceSpec> = devices.iter().map(|d| (d.kind, d)).collect();

    // Each used device is powered for the whole task and active for its own
    // kernel time.
    let total = latency.total_s;
    let mut usages = Vec::new();
    let mut embodied_inputs = Vec::new();
    for (&kind, &busy) in &latency.per_device_s {
        let device = by_kind[&kind];
        let duty = if total > 0.0 { busy / total } else { 0.0 };
        usages.push(UnitUsage { unit: &device.unit, latency_s: total, duty });
        embodied_inputs.push((&device.unit, busy));
    }
    let mut energy = carbon::operational_energy(&usages, overheads.pue, overheads.delivery_loss_fraction)?;
    let emb_split = carbon::embodied_energy_split(&embodied_inputs)?;
    energy.e_emb_j = emb_split.total();

    let window = net_window(demand, renewable, start_time, total)?;
    let forecasted = match model {
        Some(m) => Some(forecast_net(m, demand, renewable, start_time)?),
        None => None,
    };

    let charge = carbon::charge(energy.e_ope_j, emb_split, &window, policy)?;
    Ok(Quote {
        placement: outcome.placement,
        estimated_latency_s: total,
        met_qos: outcome.met_qos,
        e_ope_j: energy.e_ope_j,
        e_emb_j: energy.e_emb_j,
        charge_credits: charge,
        energy,
        latency,
        partition_steps: outcome.steps,
        net_demand_forecast: forecasted,
    })
}

/// Measured net demand over [start, start + duration], requiring coverage.
fn net_window(
    demand: &EnergyTrace,
    renewable: &EnergyTrace,
    start: i64,
    duration_s: f64,
) -> Result<Vec<NetDemandPoint>, EstimatorError> {
    let all = carbon::net_demand(demand, renewable)?;
    let end = start + duration_s.ceil() as i64;
    let covered = all.first().map(|p| p.timestamp <= start).unwrap_or(false)
        && all.last().map(|p| p.timestamp + demand.resolution() as i64 >= end).unwrap_or(false);
    if !covered {
        return Err(EstimatorError::Coverage(start));
    }
    Ok(all
        .into_iter()
        .filter(|p| p.timestamp + demand.resolution() as i64 > start && p.timestamp <= end)
        .collect())
}

/// Quantile forecast of net demand and renewable generation issued at the
/// task start, using the trained model over the trailing history window.
fn forecast_net(
    model: &RecurrentQuantileModel,
    demand: &EnergyTrace,
    renewable: &EnergyTrace,
    start: i64,
) -> Result<QuantileForecast, EstimatorError> {
    let dataset = crate::forecast::Dataset::from_traces(renewable, Some(demand), None)?;
    let idx = dataset
        .bins()
        .iter()
        .rposition(|b| b.timestamp <= start)
        .ok_or(EstimatorError::Coverage(start))?;
    Ok(model.predict_at(&dataset, idx)?)
}

/// Convenience: net demand at the P50 across horizons, as points.
pub fn forecast_window_points(forecast: &QuantileForecast) -> Vec<(u32, f64)> {
    forecast
        .horizons()
        .iter()
        .map(|&h| (h, forecast.value(Target::NetDemand, h, 0.5).unwrap_or(0.0)))
        .collect()
}
