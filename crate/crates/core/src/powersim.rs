//! Forward-progress simulation of accelerators under fluctuating renewable
//! supply.
//!
//! Three volatility classes share one discrete-time driver:
//!
//! * fully nonvolatile devices scale throughput linearly with available
//!   power and keep all state through outages;
//! * partially nonvolatile devices run only above a threshold power and lose
//!   a configurable fraction of the work done since power-up on every
//!   downward crossing, plus an idle resume penalty;
//! * volatile checkpointed devices need full peak power, checkpoint
//!   periodically (stalling while the checkpoint is written), and roll back
//!   to the last checkpoint on any power loss.
//!
//! A battery charges from surplus supply and discharges greedily to sustain
//! the highest feasible rate. Energy use never exceeds supply plus discharge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carbon::{self, HardwareKind, HardwareUnit};
use crate::traces::{EnergyTrace, TraceKind, TraceSample};

const POWER_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("dt {dt} s does not divide the supply resolution {resolution} s")]
    DtResolution { dt: u64, resolution: u64 },
    #[error("supply trace has a gap at t={at}; resample it to a regular grid first")]
    IrregularTrace { at: i64 },
    #[error("workload must be positive")]
    EmptyWorkload,
    #[error("device model invalid: {0}")]
    BadDevice(String),
    #[error("battery invalid: {0}")]
    BadBattery(String),
    #[error("sweep grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Volatility {
    FullyNonvolatile,
    PartiallyNonvolatile,
    VolatileCheckpointed,
}

impl std::fmt::Display for Volatility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Volatility::FullyNonvolatile => write!(f, "fully_nonvolatile"),
            Volatility::PartiallyNonvolatile => write!(f, "partially_nonvolatile"),
            Volatility::VolatileCheckpointed => write!(f, "volatile_checkpointed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub volatility: Volatility,
    pub peak_power_w: f64,
    /// Minimum power for the partially nonvolatile class to operate.
    pub threshold_power_w: f64,
    pub peak_throughput_ops: f64,
    pub checkpoint_interval_s: f64,
    pub checkpoint_cost_j: f64,
    pub resume_penalty_s: f64,
    pub state_loss_fraction: f64,
    pub tbe_j: f64,
    pub lifetime_s: f64,
}

impl DeviceModel {
    /// Shared reference parameters; only the volatility class differs.
    ///
    /// The checkpoint interval is long relative to how long fluctuating
    /// supply stays at peak, which is the regime where the volatility-class
    /// progress ordering is structural: a checkpointed device rarely commits
    /// before the next dip wipes it back.
    pub fn reference(volatility: Volatility) -> Self {
        Self {
            volatility,
            peak_power_w: 200.0,
            threshold_power_w: 50.0,
            peak_throughput_ops: 1.0e9,
            checkpoint_interval_s: 14_400.0,
            checkpoint_cost_j: 80_000.0,
            resume_penalty_s: 60.0,
            state_loss_fraction: if volatility == Volatility::FullyNonvolatile { 0.0 } else { 0.5 },
            tbe_j: 5.0e8,
            lifetime_s: 5.0 * 365.25 * 86_400.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.peak_power_w.is_nan() || self.peak_power_w <= 0.0 {
            return Err(SimError::BadDevice("peak power must be positive".into()));
        }
        if !(0.0..=self.peak_power_w).contains(&self.threshold_power_w) {
            return Err(SimError::BadDevice("threshold must lie in [0, peak power]".into()));
        }
        if self.peak_throughput_ops.is_nan() || self.peak_throughput_ops <= 0.0 {
            return Err(SimError::BadDevice("throughput must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.state_loss_fraction) {
            return Err(SimError::BadDevice("state loss fraction must lie in [0,1]".into()));
        }
        if self.volatility == Volatility::FullyNonvolatile && self.state_loss_fraction != 0.0 {
            return Err(SimError::BadDevice(
                "fully nonvolatile devices cannot lose state".into(),
            ));
        }
        if self.checkpoint_interval_s <= 0.0 || self.checkpoint_cost_j < 0.0 || self.resume_penalty_s < 0.0 {
            return Err(SimError::BadDevice("checkpoint/resume parameters out of range".into()));
        }
        Ok(())
    }

    fn as_hardware_unit(&self) -> HardwareUnit {
        HardwareUnit {
            id: format!("{}", self.volatility),
            kind: HardwareKind::Pim,
            tbe_j: self.tbe_j,
            lifetime_s: self.lifetime_s,
            power_active_w: self.peak_power_w,
            power_idle_w: 0.0,
            recycled: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub capacity_j: f64,
    pub level_j: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
}

impl Battery {
    pub fn none() -> Self {
        Self { capacity_j: 0.0, level_j: 0.0, charge_efficiency: 1.0, discharge_efficiency: 1.0 }
    }

    pub fn new(capacity_j: f64, level_j: f64) -> Self {
        Self { capacity_j, level_j, charge_efficiency: 0.95, discharge_efficiency: 0.95 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.capacity_j < 0.0 || self.level_j < 0.0 || self.level_j > self.capacity_j {
            return Err(SimError::BadBattery("level must lie in [0, capacity]".into()));
        }
        for eff in [self.charge_efficiency, self.discharge_efficiency] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(SimError::BadBattery("efficiencies must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub supply: EnergyTrace,
    pub device: DeviceModel,
    pub battery: Battery,
    pub workload_ops: f64,
    pub dt_s: u64,
    pub seed: u64,
    /// Carbon intensity applied to the energy shortfall (grid makeup);
    /// renewable supply itself counts as zero.
    pub grid_intensity: f64,
}

impl Scenario {
    pub fn new(supply: EnergyTrace, device: DeviceModel, battery: Battery, workload_ops: f64) -> Self {
        Self {
            supply,
            device,
            battery,
            workload_ops,
            dt_s: 60,
            seed: 42,
            grid_intensity: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEvent {
    Run,
    Stall,
    Resume,
    Checkpoint,
    Rollback,
}

impl std::fmt::Display for SimEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimEvent::Run => write!(f, "run"),
            SimEvent::Stall => write!(f, "stall"),
            SimEvent::Resume => write!(f, "resume"),
            SimEvent::Checkpoint => write!(f, "checkpoint"),
            SimEvent::Rollback => write!(f, "rollback"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimelinePoint {
    pub t_s: i64,
    pub ops_completed: f64,
    pub power_used_w: f64,
    pub battery_j: f64,
    pub event: SimEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    /// None when the workload did not finish within the trace.
    pub completion_time_s: Option<f64>,
    pub timeline: Vec<TimelinePoint>,
    pub energy_consumed_j: f64,
    pub rollback_count: u64,
    pub rolled_back_ops: f64,
    pub operational_energy_j: f64,
    pub embodied_energy_j: f64,
    /// Peak-rate energy the supply could not provide, weighted by grid
    /// intensity: the makeup a grid connection would have delivered.
    pub weighted_shortfall_j: f64,
    pub final_ops: f64,
}

/// Mutable per-device simulation state; one step advances it by dt under a
/// given available power.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub ops_done: f64,
    /// Workload size; crossing it mid-step records the exact offset.
    target_ops: f64,
    /// Seconds into the current step at which the target was crossed.
    completed_offset_s: Option<f64>,
    powered: bool,
    resume_remaining_s: f64,
    ops_since_power_up: f64,
    ops_since_checkpoint: f64,
    run_since_checkpoint_s: f64,
    checkpoint_stall_remaining_s: f64,
    pub rollback_count: u64,
    pub rolled_back_ops: f64,
}

impl Default for DeviceState {
    fn default() -> Self {
        Self {
            ops_done: 0.0,
            target_ops: f64::INFINITY,
            completed_offset_s: None,
            powered: false,
            resume_remaining_s: 0.0,
            ops_since_power_up: 0.0,
            ops_since_checkpoint: 0.0,
            run_since_checkpoint_s: 0.0,
            checkpoint_stall_remaining_s: 0.0,
            rollback_count: 0,
            rolled_back_ops: 0.0,
        }
    }
}

impl DeviceState {
    fn note_progress(&mut self, rate: f64, run_seconds: f64, offset_of_run_start: f64) -> f64 {
        let gained = rate * run_seconds;
        if self.completed_offset_s.is_none()
            && rate > 0.0
            && self.ops_done < self.target_ops
            && self.ops_done + gained >= self.target_ops
        {
            self.completed_offset_s =
                Some(offset_of_run_start + (self.target_ops - self.ops_done) / rate);
        }
        self.ops_done += gained;
        gained
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub power_used_w: f64,
    pub event: SimEvent,
    pub ops_gained: f64,
    pub run_seconds: f64,
}

/// Advances the device by `dt` seconds with `available_power` watts on
/// offer (supply plus allowed battery discharge). Total function: any
/// non-negative power is handled.
pub fn step(device: &DeviceModel, state: &mut DeviceState, available_power: f64, dt: f64) -> StepOutcome {
    state.completed_offset_s = None;
    match device.volatility {
        Volatility::FullyNonvolatile => {
            let used = available_power.min(device.peak_power_w);
            let rate = device.peak_throughput_ops * used / device.peak_power_w;
            let gained = state.note_progress(rate, dt, 0.0);
            StepOutcome {
                power_used_w: used,
                event: if rate > 0.0 { SimEvent::Run } else { SimEvent::Stall },
                ops_gained: gained,
                run_seconds: if rate > 0.0 { dt } else { 0.0 },
            }
        }
        Volatility::PartiallyNonvolatile => step_partial(device, state, available_power, dt),
        Volatility::VolatileCheckpointed => step_volatile(device, state, available_power, dt),
    }
}

fn step_partial(device: &DeviceModel, state: &mut DeviceState, p: f64, dt: f64) -> StepOutcome {
    let eligible = p + POWER_EPS >= device.threshold_power_w;
    if state.powered && !eligible {
        let lost = device.state_loss_fraction * state.ops_since_power_up;
        state.ops_done -= lost;
        state.rolled_back_ops += lost;
        state.rollback_count += 1;
        state.ops_since_power_up = 0.0;
        state.powered = false;
        state.resume_remaining_s = 0.0;
        return StepOutcome { power_used_w: 0.0, event: SimEvent::Rollback, ops_gained: 0.0, run_seconds: 0.0 };
    }
    if !state.powered {
        if !eligible {
            return StepOutcome { power_used_w: 0.0, event: SimEvent::Stall, ops_gained: 0.0, run_seconds: 0.0 };
        }
        state.powered = true;
        state.resume_remaining_s = device.resume_penalty_s;
        state.ops_since_power_up = 0.0;
    }
    let idle = state.resume_remaining_s.min(dt);
    state.resume_remaining_s -= idle;
    let run_seconds = dt - idle;
    let used = p.min(device.peak_power_w);
    let rate = device.peak_throughput_ops * used / device.peak_power_w;
    let gained = state.note_progress(rate, run_seconds, idle);
    state.ops_since_power_up += gained;
    StepOutcome {
        // Idle resume time draws nothing.
        power_used_w: used * run_seconds / dt,
        event: if idle > 0.0 { SimEvent::Resume } else { SimEvent::Run },
        ops_gained: gained,
        run_seconds,
    }
}

fn step_volatile(device: &DeviceModel, state: &mut DeviceState, p: f64, dt: f64) -> StepOutcome {
    let eligible = p + POWER_EPS >= device.peak_power_w;
    if state.powered && !eligible {
        let lost = state.ops_since_checkpoint;
        state.ops_done -= lost;
        state.rolled_back_ops += lost;
        state.rollback_count += 1;
        state.ops_since_checkpoint = 0.0;
        state.run_since_checkpoint_s = 0.0;
        state.checkpoint_stall_remaining_s = 0.0;
        state.powered = false;
        state.resume_remaining_s = 0.0;
        return StepOutcome { power_used_w: 0.0, event: SimEvent::Rollback, ops_gained: 0.0, run_seconds: 0.0 };
    }
    if !state.powered {
        if !eligible {
            return StepOutcome { power_used_w: 0.0, event: SimEvent::Stall, ops_gained: 0.0, run_seconds: 0.0 };
        }
        state.powered = true;
        state.resume_remaining_s = device.resume_penalty_s;
    }
    let mut budget = dt;
    let mut energy = 0.0;
    let mut gained = 0.0;
    let mut run_seconds = 0.0;
    let mut event = SimEvent::Run;
    let mut resumed = false;
    let mut checkpointed = false;
    while budget > POWER_EPS {
        if state.resume_remaining_s > 0.0 {
            let u = state.resume_remaining_s.min(budget);
            state.resume_remaining_s -= u;
            budget -= u;
            resumed = true;
        } else if state.checkpoint_stall_remaining_s > 0.0 {
            let u = state.checkpoint_stall_remaining_s.min(budget);
            state.checkpoint_stall_remaining_s -= u;
            budget -= u;
            energy += device.peak_power_w * u;
            checkpointed = true;
            if state.checkpoint_stall_remaining_s <= 0.0 {
                // Checkpoint committed: nothing left to lose.
                state.ops_since_checkpoint = 0.0;
                state.run_since_checkpoint_s = 0.0;
            }
        } else {
            let until_checkpoint = device.checkpoint_interval_s - state.run_since_checkpoint_s;
            let u = until_checkpoint.min(budget);
            let ops = state.note_progress(device.peak_throughput_ops, u, dt - budget);
            state.ops_since_checkpoint += ops;
            state.run_since_checkpoint_s += u;
            gained += ops;
            run_seconds += u;
            energy += device.peak_power_w * u;
            budget -= u;
            if state.run_since_checkpoint_s + POWER_EPS >= device.checkpoint_interval_s {
                if device.checkpoint_cost_j > 0.0 {
                    state.checkpoint_stall_remaining_s =
                        device.checkpoint_cost_j / device.peak_power_w;
                } else {
                    state.ops_since_checkpoint = 0.0;
                    state.run_since_checkpoint_s = 0.0;
                }
            }
        }
    }
    if checkpointed {
        event = SimEvent::Checkpoint;
    } else if resumed {
        event = SimEvent::Resume;
    } else if run_seconds == 0.0 {
        event = SimEvent::Stall;
    }
    StepOutcome { power_used_w: energy / dt, event, ops_gained: gained, run_seconds }
}

/// Runs a scenario to completion or to the end of its supply trace.
pub fn run(scenario: &Scenario) -> Result<SimResult, SimError> {
    scenario.device.validate()?;
    scenario.battery.validate()?;
    if scenario.workload_ops.is_nan() || scenario.workload_ops <= 0.0 {
        return Err(SimError::EmptyWorkload);
    }
    let resolution = scenario.supply.resolution();
    if scenario.dt_s == 0 || !resolution.is_multiple_of(scenario.dt_s) {
        return Err(SimError::DtResolution { dt: scenario.dt_s, resolution });
    }
    if let Some(pair) = scenario
        .supply
        .samples()
        .windows(2)
        .find(|w| w[1].timestamp - w[0].timestamp != resolution as i64)
    {
        return Err(SimError::IrregularTrace { at: pair[1].timestamp });
    }
    let dt = scenario.dt_s as f64;
    let steps_per_bin = (resolution / scenario.dt_s) as usize;
    let device = &scenario.device;
    let mut battery = scenario.battery;
    let mut state = DeviceState { target_ops: scenario.workload_ops, ..DeviceState::default() };
    let mut timeline = Vec::with_capacity(scenario.supply.len());
    let mut energy_consumed = 0.0;
    let mut weighted_shortfall = 0.0;
    let mut completion: Option<f64> = None;
    let mut t = scenario.supply.samples()[0].timestamp as f64;

    'bins: for sample in scenario.supply.samples() {
        // Supply traces are in megawatts; the device draws watts.
        let supply_w = sample.value * 1.0e6;
        let mut bin_energy = 0.0;
        let mut bin_event = SimEvent::Run;
        let mut any_run = false;
        let mut steps_taken = 0usize;
        for _ in 0..steps_per_bin {
            steps_taken += 1;
            let deliverable_w = battery.level_j * battery.discharge_efficiency / dt;
            let available = supply_w + deliverable_w;
            let out = step(device, &mut state, available, dt);
            let used_j = out.power_used_w * dt;
            // Battery covers whatever the supply could not.
            let from_supply = used_j.min(supply_w * dt);
            let from_battery = used_j - from_supply;
            if from_battery > 0.0 {
                battery.level_j -= from_battery / battery.discharge_efficiency;
                battery.level_j = battery.level_j.max(0.0);
            } else {
                let surplus = supply_w * dt - used_j;
                battery.level_j = (battery.level_j + surplus * battery.charge_efficiency)
                    .min(battery.capacity_j);
            }
            energy_consumed += used_j;
            bin_energy += used_j;
            weighted_shortfall +=
                scenario.grid_intensity * (device.peak_power_w * dt - used_j).max(0.0);
            bin_event = bin_event.max(out.event);
            any_run = any_run || out.run_seconds > 0.0;
            if state.ops_done >= scenario.workload_ops {
                // The step records how far in it crossed the target.
                let offset = state.completed_offset_s.unwrap_or(dt);
                completion = Some(t + offset);
                state.ops_done = scenario.workload_ops;
                timeline.push(TimelinePoint {
                    t_s: (t + offset) as i64,
                    ops_completed: state.ops_done,
                    power_used_w: bin_energy / (dt * steps_taken as f64),
                    battery_j: battery.level_j,
                    event: bin_event,
                });
                break 'bins;
            }
            t += dt;
        }
        if !any_run && bin_event == SimEvent::Run {
            bin_event = SimEvent::Stall;
        }
        timeline.push(TimelinePoint {
            t_s: sample.timestamp + resolution as i64,
            ops_completed: state.ops_done,
            power_used_w: bin_energy / resolution as f64,
            battery_j: battery.level_j,
            event: bin_event,
        });
    }

    let elapsed = completion.unwrap_or_else(|| {
        let last = scenario.supply.samples().last().unwrap();
        (last.timestamp + resolution as i64) as f64 - scenario.supply.samples()[0].timestamp as f64
    });
    let unit = device.as_hardware_unit();
    let embodied = carbon::embodied_energy(&[(&unit, elapsed)]).expect("valid lifetime");

    Ok(SimResult {
        completion_time_s: completion,
        final_ops: state.ops_done,
        timeline,
        energy_consumed_j: energy_consumed,
        rollback_count: state.rollback_count,
        rolled_back_ops: state.rolled_back_ops,
        operational_energy_j: energy_consumed,
        embodied_energy_j: embodied,
        weighted_shortfall_j: weighted_shortfall,
    })
}

pub fn timeline_csv(timeline: &[TimelinePoint]) -> String {
    let mut out = String::from("t,ops_completed,power_used_w,battery_j,event\n");
    for p in timeline {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.t_s, p.ops_completed, p.power_used_w, p.battery_j, p.event
        ));
    }
    out
}

/// Shared parameters for a three-way class comparison.
#[derive(Debug, Clone)]
pub struct ClassComparisonConfig {
    pub workload_ops: f64,
    pub dt_s: u64,
    pub battery: Battery,
    pub base_device: DeviceModel,
}

impl Default for ClassComparisonConfig {
    fn default() -> Self {
        Self {
            workload_ops: 1.0e15,
            dt_s: 60,
            battery: Battery::none(),
            base_device: DeviceModel::reference(Volatility::FullyNonvolatile),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassProgress {
    pub volatility: Volatility,
    /// Fraction of the workload complete at each probe time.
    pub progress: Vec<f64>,
    pub rollbacks: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassComparison {
    pub probe_times_s: Vec<i64>,
    pub classes: Vec<ClassProgress>,
}

/// Runs the three volatility classes over the same supply with identical
/// peak/threshold/throughput and reports progress at every trace bin.
pub fn compare_classes(supply: &EnergyTrace, config: &ClassComparisonConfig) -> Result<ClassComparison, SimError> {
    let mut classes = Vec::new();
    let mut probe_times = Vec::new();
    for volatility in [
        Volatility::FullyNonvolatile,
        Volatility::PartiallyNonvolatile,
        Volatility::VolatileCheckpointed,
    ] {
        let mut device = config.base_device.clone();
        device.volatility = volatility;
        // The base device may be the fully nonvolatile reference with zero
        // loss; lossy classes then fall back to the reference fraction.
        device.state_loss_fraction = match volatility {
            Volatility::FullyNonvolatile => 0.0,
            _ if config.base_device.state_loss_fraction > 0.0 => {
                config.base_device.state_loss_fraction
            }
            _ => 0.5,
        };
        let scenario = Scenario {
            supply: supply.clone(),
            device,
            battery: config.battery,
            workload_ops: config.workload_ops,
            dt_s: config.dt_s,
            seed: 0,
            grid_intensity: 1.0,
        };
        let result = run(&scenario)?;
        if probe_times.is_empty() {
            probe_times = result.timeline.iter().map(|p| p.t_s).collect();
        }
        classes.push(ClassProgress {
            volatility,
            progress: result
                .timeline
                .iter()
                .map(|p| p.ops_completed / config.workload_ops)
                .collect(),
            rollbacks: result.rollback_count,
        });
    }
    Ok(ClassComparison { probe_times_s: probe_times, classes })
}

/// One candidate design point of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ParetoPoint {
    pub renewable_scale: f64,
    pub battery_capacity_j: f64,
    pub volatility: Volatility,
    /// Embodied cost proxy: device TBE + battery capacity * embodied/J.
    pub cost_j: f64,
    pub weighted_shortfall_j: f64,
    /// Infinite when the workload never finishes.
    pub completion_time_s: f64,
}

impl ParetoPoint {
    pub fn objectives(&self) -> [f64; 3] {
        [self.cost_j, self.weighted_shortfall_j, self.completion_time_s]
    }
}

/// a dominates b: no worse in every objective, strictly better in one.
pub fn dominates(a: &[f64; 3], b: &[f64; 3]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub supply: EnergyTrace,
    pub workload_ops: f64,
    pub dt_s: u64,
    pub renewable_scales: Vec<f64>,
    pub battery_capacities_j: Vec<f64>,
    pub devices: Vec<DeviceModel>,
    /// Embodied energy attributed per joule of battery capacity.
    pub battery_embodied_per_j: f64,
    pub grid_intensity: f64,
}

/// Evaluates the full grid and keeps only non-dominated points, maintained
/// incrementally: each candidate evicts the points it dominates and is
/// dropped if anything present dominates it.
pub fn pareto_sweep(config: &SweepConfig) -> Result<Vec<ParetoPoint>, SimError> {
    if config.renewable_scales.is_empty()
        || config.battery_capacities_j.is_empty()
        || config.devices.is_empty()
    {
        return Err(SimError::EmptyGrid);
    }
    let mut frontier: Vec<ParetoPoint> = Vec::new();
    for &scale in &config.renewable_scales {
        let scaled = EnergyTrace::new(
            config
                .supply
                .samples()
                .iter()
                .map(|s| TraceSample { timestamp: s.timestamp, value: s.value * scale })
                .collect(),
            config.supply.resolution(),
            config.supply.kind(),
        )
        .expect("scaling preserves validity");
        for &capacity in &config.battery_capacities_j {
            for device in &config.devices {
                let scenario = Scenario {
                    supply: scaled.clone(),
                    device: device.clone(),
                    battery: Battery::new(capacity, capacity),
                    workload_ops: config.workload_ops,
                    dt_s: config.dt_s,
                    seed: 0,
                    grid_intensity: config.grid_intensity,
                };
                let result = run(&scenario)?;
                let point = ParetoPoint {
                    renewable_scale: scale,
                    battery_capacity_j: capacity,
                    volatility: device.volatility,
                    cost_j: device.tbe_j + capacity * config.battery_embodied_per_j,
                    weighted_shortfall_j: result.weighted_shortfall_j,
                    completion_time_s: result.completion_time_s.unwrap_or(f64::INFINITY),
                };
                insert_nondominated(&mut frontier, point);
            }
        }
    }
    Ok(frontier)
}

fn insert_nondominated(frontier: &mut Vec<ParetoPoint>, candidate: ParetoPoint) {
    let c = candidate.objectives();
    if frontier.iter().any(|p| {
        let o = p.objectives();
        dominates(&o, &c) || o == c
    }) {
        return;
    }
    frontier.retain(|p| !dominates(&c, &p.objectives()));
    frontier.push(candidate);
}

/// Incremental non-dominated filter over arbitrary points; duplicates of an
/// objective vector collapse to the first occurrence.
pub fn non_dominated(points: impl IntoIterator<Item = ParetoPoint>) -> Vec<ParetoPoint> {
    let mut frontier = Vec::new();
    for p in points {
        insert_nondominated(&mut frontier, p);
    }
    frontier
}

/// Seeded on/off supply trace in megawatts: each bin is either zero or a
/// level drawn around the device peak, the shape used for fluctuation
/// studies.
pub fn random_on_off_trace(
    seed: u64,
    bins: usize,
    resolution_s: u64,
    peak_power_w: f64,
) -> EnergyTrace {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let samples = (0..bins)
        .map(|i| {
            let off = rng.gen_bool(0.3);
            let level_w = if off { 0.0 } else { rng.gen_range(0.0..1.3) * peak_power_w };
            TraceSample { timestamp: i as i64 * resolution_s as i64, value: level_w / 1.0e6 }
        })
        .collect();
    EnergyTrace::new(samples, resolution_s, TraceKind::RenewableGeneration).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mw(watts: f64) -> f64 {
        watts / 1.0e6
    }

    fn constant_trace(bins: usize, resolution: u64, watts: f64) -> EnergyTrace {
        EnergyTrace::new(
            (0..bins)
                .map(|i| TraceSample { timestamp: i as i64 * resolution as i64, value: mw(watts) })
                .collect(),
            resolution,
            TraceKind::RenewableGeneration,
        )
        .unwrap()
    }

    /// 1 h at the given level, 1 h off, repeating.
    fn square_wave(hours: usize, watts: f64) -> EnergyTrace {
        EnergyTrace::new(
            (0..hours)
                .map(|i| TraceSample {
                    timestamp: i as i64 * 3600,
                    value: if i % 2 == 0 { mw(watts) } else { 0.0 },
                })
                .collect(),
            3600,
            TraceKind::RenewableGeneration,
        )
        .unwrap()
    }

    #[test]
    fn constant_peak_power_completes_on_schedule() {
        let device = DeviceModel::reference(Volatility::FullyNonvolatile);
        // 1e9 ops/s for 1800 s of work.
        let workload = 1800.0 * device.peak_throughput_ops;
        let supply = constant_trace(2, 3600, device.peak_power_w);
        let scenario = Scenario::new(supply, device, Battery::none(), workload);
        let result = run(&scenario).unwrap();
        assert!((result.completion_time_s.unwrap() - 1800.0).abs() < 1e-6);
        assert_eq!(result.rollback_count, 0);
    }

    #[test]
    fn zero_power_means_zero_progress() {
        for volatility in [
            Volatility::FullyNonvolatile,
            Volatility::PartiallyNonvolatile,
            Volatility::VolatileCheckpointed,
        ] {
            let device = DeviceModel::reference(volatility);
            let scenario =
                Scenario::new(constant_trace(3, 3600, 0.0), device, Battery::none(), 1e12);
            let result = run(&scenario).unwrap();
            assert_eq!(result.final_ops, 0.0, "{volatility}");
            assert_eq!(result.energy_consumed_j, 0.0);
        }
    }

    #[test]
    fn fully_nonvolatile_scales_linearly_below_peak() {
        // Closed form, three bins at half peak: rate is half throughput.
        let device = DeviceModel::reference(Volatility::FullyNonvolatile);
        let supply = constant_trace(3, 600, device.peak_power_w / 2.0);
        let scenario = Scenario::new(supply, device.clone(), Battery::none(), 1e18);
        let result = run(&scenario).unwrap();
        let want = 0.5 * device.peak_throughput_ops * 1800.0;
        assert!((result.final_ops - want).abs() / want < 1e-12);
        // Consumed exactly the supplied half-peak power.
        assert!((result.energy_consumed_j - device.peak_power_w / 2.0 * 1800.0).abs() < 1e-6);
    }

    #[test]
    fn square_wave_nonvolatile_beats_checkpointed() {
        let nv = DeviceModel::reference(Volatility::FullyNonvolatile);
        let mut vc = DeviceModel::reference(Volatility::VolatileCheckpointed);
        vc.checkpoint_interval_s = 7200.0; // longer than any on-phase
        let workload = 1.5 * 3600.0 * nv.peak_throughput_ops;
        let supply = square_wave(12, nv.peak_power_w);
        let nv_result =
            run(&Scenario::new(supply.clone(), nv, Battery::none(), workload)).unwrap();
        let vc_result = run(&Scenario::new(supply, vc, Battery::none(), workload)).unwrap();
        // Closed form: 1 h on, 1 h off, 0.5 h into the second on-phase.
        assert!((nv_result.completion_time_s.unwrap() - 2.5 * 3600.0).abs() < 1e-6);
        // The checkpointed device never survives to a checkpoint.
        assert!(vc_result.completion_time_s.is_none());
        assert!(vc_result.final_ops < workload * 0.01);
        assert!(vc_result.rollback_count > 0);
    }

    #[test]
    fn below_threshold_only_fully_nonvolatile_progresses() {
        let base = DeviceModel::reference(Volatility::FullyNonvolatile);
        let supply = constant_trace(3, 3600, base.threshold_power_w / 2.0);
        let comparison = compare_classes(&supply, &ClassComparisonConfig::default()).unwrap();
        let by_class = |v: Volatility| {
            comparison
                .classes
                .iter()
                .find(|c| c.volatility == v)
                .unwrap()
                .progress
                .last()
                .copied()
                .unwrap()
        };
        assert!(by_class(Volatility::FullyNonvolatile) > 0.0);
        assert_eq!(by_class(Volatility::PartiallyNonvolatile), 0.0);
        assert_eq!(by_class(Volatility::VolatileCheckpointed), 0.0);
    }

    #[test]
    fn constant_ample_supply_classes_within_checkpoint_overhead() {
        let config = ClassComparisonConfig {
            workload_ops: 3600.0 * 1.0e9,
            ..ClassComparisonConfig::default()
        };
        let supply = constant_trace(3, 3600, 200.0);
        let comparison = compare_classes(&supply, &config).unwrap();
        let finals: Vec<f64> = comparison
            .classes
            .iter()
            .map(|c| *c.progress.last().unwrap())
            .collect();
        // All classes finish; the volatile class only trails by checkpoint
        // stalls, which the workload ends before hitting here.
        for f in finals {
            assert!((f - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dominance_ordering_over_random_traces() {
        let config = ClassComparisonConfig::default();
        for seed in 0..40 {
            let supply = random_on_off_trace(seed, 48, 1800, config.base_device.peak_power_w);
            let comparison = compare_classes(&supply, &config).unwrap();
            let find = |v: Volatility| {
                comparison.classes.iter().find(|c| c.volatility == v).unwrap()
            };
            let fnv = find(Volatility::FullyNonvolatile);
            let pnv = find(Volatility::PartiallyNonvolatile);
            let vc = find(Volatility::VolatileCheckpointed);
            for i in 0..comparison.probe_times_s.len() {
                assert!(
                    fnv.progress[i] + 1e-12 >= pnv.progress[i],
                    "seed {seed} probe {i}: fnv {} < pnv {}",
                    fnv.progress[i],
                    pnv.progress[i]
                );
                assert!(
                    pnv.progress[i] + 1e-12 >= vc.progress[i],
                    "seed {seed} probe {i}: pnv {} < vc {}",
                    pnv.progress[i],
                    vc.progress[i]
                );
            }
        }
    }

    #[test]
    fn energy_conservation_over_random_traces() {
        for seed in 100..130 {
            let supply = random_on_off_trace(seed, 48, 1800, 200.0);
            let supplied: f64 = supply.values().sum::<f64>() * 1.0e6 * 1800.0;
            for volatility in [
                Volatility::FullyNonvolatile,
                Volatility::PartiallyNonvolatile,
                Volatility::VolatileCheckpointed,
            ] {
                let device = DeviceModel::reference(volatility);
                let battery = Battery { capacity_j: 1.0e6, level_j: 5.0e5, charge_efficiency: 0.9, discharge_efficiency: 0.9 };
                let scenario = Scenario::new(supply.clone(), device, battery, 1e18);
                let result = run(&scenario).unwrap();
                assert!(
                    result.energy_consumed_j <= supplied + 5.0e5 + 1e-6,
                    "seed {seed} {volatility}: consumed {} > supplied {supplied} + initial",
                    result.energy_consumed_j
                );
                for p in &result.timeline {
                    assert!(p.battery_j >= -1e-9 && p.battery_j <= 1.0e6 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn progress_monotone_in_supply() {
        for seed in 200..220 {
            let base = random_on_off_trace(seed, 48, 1800, 200.0);
            // Pointwise-greater trace: add 30 W to every bin.
            let richer = EnergyTrace::new(
                base.samples()
                    .iter()
                    .map(|s| TraceSample { timestamp: s.timestamp, value: s.value + mw(30.0) })
                    .collect(),
                1800,
                TraceKind::RenewableGeneration,
            )
            .unwrap();
            for volatility in [
                Volatility::FullyNonvolatile,
                Volatility::PartiallyNonvolatile,
                Volatility::VolatileCheckpointed,
            ] {
                let device = DeviceModel::reference(volatility);
                let lo = run(&Scenario::new(base.clone(), device.clone(), Battery::none(), 1e18)).unwrap();
                let hi = run(&Scenario::new(richer.clone(), device, Battery::none(), 1e18)).unwrap();
                assert!(
                    hi.final_ops + 1e-6 >= lo.final_ops,
                    "seed {seed} {volatility}: {} < {}",
                    hi.final_ops,
                    lo.final_ops
                );
            }
        }
    }

    #[test]
    fn battery_bridges_gaps() {
        let device = DeviceModel::reference(Volatility::FullyNonvolatile);
        let workload = 2.0 * 3600.0 * device.peak_throughput_ops;
        // Square wave with a lossless battery pre-charged to cover the gaps.
        let supply = square_wave(8, device.peak_power_w);
        let battery = Battery {
            capacity_j: 1.0e9,
            level_j: 1.0e9,
            charge_efficiency: 1.0,
            discharge_efficiency: 1.0,
        };
        let with_battery =
            run(&Scenario::new(supply, device.clone(), battery, workload)).unwrap();
        let constant = run(&Scenario::new(
            constant_trace(8, 3600, device.peak_power_w),
            device,
            Battery::none(),
            workload,
        ))
        .unwrap();
        assert!(
            (with_battery.completion_time_s.unwrap() - constant.completion_time_s.unwrap()).abs()
                < 1e-6
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let supply = random_on_off_trace(7, 24, 1800, 200.0);
        let device = DeviceModel::reference(Volatility::PartiallyNonvolatile);
        let scenario = Scenario::new(supply, device, Battery::new(1e6, 1e6), 1e14);
        let a = run(&scenario).unwrap();
        let b = run(&scenario).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_stalls_extend_completion() {
        // Constant peak supply; checkpoints every 600 s of run time, each
        // stalling checkpoint_cost / peak_power = 100 s. An 1800 s workload
        // crosses two committed checkpoints: done at 1800 + 200 s.
        let mut device = DeviceModel::reference(Volatility::VolatileCheckpointed);
        device.checkpoint_interval_s = 600.0;
        device.checkpoint_cost_j = 20_000.0;
        device.resume_penalty_s = 0.0;
        let workload = 1800.0 * device.peak_throughput_ops;
        let supply = constant_trace(2, 3600, device.peak_power_w);
        let result = run(&Scenario::new(supply, device, Battery::none(), workload)).unwrap();
        assert!((result.completion_time_s.unwrap() - 2000.0).abs() < 1e-6);
    }

    #[test]
    fn irregular_supply_is_rejected() {
        let device = DeviceModel::reference(Volatility::FullyNonvolatile);
        let supply = EnergyTrace::new(
            vec![
                TraceSample { timestamp: 0, value: mw(100.0) },
                TraceSample { timestamp: 3600, value: mw(100.0) },
                TraceSample { timestamp: 14_400, value: mw(100.0) },
            ],
            3600,
            TraceKind::RenewableGeneration,
        )
        .unwrap();
        let err = run(&Scenario::new(supply, device, Battery::none(), 1e9)).unwrap_err();
        assert_eq!(err, SimError::IrregularTrace { at: 14_400 });
    }

    #[test]
    fn dt_must_divide_resolution() {
        let device = DeviceModel::reference(Volatility::FullyNonvolatile);
        let mut scenario =
            Scenario::new(constant_trace(2, 3600, 100.0), device, Battery::none(), 1e9);
        scenario.dt_s = 7;
        assert_eq!(
            run(&scenario).unwrap_err(),
            SimError::DtResolution { dt: 7, resolution: 3600 }
        );
    }

    /// O(n^2) dominance oracle.
    fn brute_force_frontier(points: &[ParetoPoint]) -> Vec<[f64; 3]> {
        points
            .iter()
            .filter(|p| {
                !points.iter().any(|q| dominates(&q.objectives(), &p.objectives()))
            })
            .map(|p| p.objectives())
            .collect()
    }

    #[test]
    fn pareto_single_point_grid() {
        let supply = constant_trace(4, 3600, 150.0);
        let config = SweepConfig {
            supply,
            workload_ops: 3600.0 * 1e9,
            dt_s: 60,
            renewable_scales: vec![1.0],
            battery_capacities_j: vec![0.0],
            devices: vec![DeviceModel::reference(Volatility::FullyNonvolatile)],
            battery_embodied_per_j: 10.0,
            grid_intensity: 1.0,
        };
        let frontier = pareto_sweep(&config).unwrap();
        assert_eq!(frontier.len(), 1);
    }

    #[test]
    fn pareto_dominated_point_is_excluded() {
        // Same device, same scale, two battery sizes: bigger battery costs
        // more; with constant ample supply it brings no benefit.
        let device = DeviceModel::reference(Volatility::FullyNonvolatile);
        let supply = constant_trace(4, 3600, device.peak_power_w);
        let config = SweepConfig {
            supply,
            workload_ops: 3600.0 * 1e9,
            dt_s: 60,
            renewable_scales: vec![1.0],
            battery_capacities_j: vec![0.0, 1.0e6],
            devices: vec![device],
            battery_embodied_per_j: 10.0,
            grid_intensity: 1.0,
        };
        let frontier = pareto_sweep(&config).unwrap();
        assert_eq!(frontier.len(), 1);
        assert_eq!(frontier[0].battery_capacity_j, 0.0);
    }

    #[test]
    fn pareto_matches_brute_force_oracle() {
        for seed in 0..10 {
            let supply = random_on_off_trace(seed, 24, 1800, 200.0);
            let config = SweepConfig {
                supply,
                workload_ops: 4.0 * 3600.0 * 1e9,
                dt_s: 300,
                renewable_scales: vec![0.5, 1.0, 1.5],
                battery_capacities_j: vec![0.0, 5.0e5, 2.0e6],
                devices: vec![
                    DeviceModel::reference(Volatility::FullyNonvolatile),
                    DeviceModel::reference(Volatility::VolatileCheckpointed),
                ],
                battery_embodied_per_j: 25.0,
                grid_intensity: 1.0,
            };
            // Evaluate the raw grid once for the oracle.
            let mut raw = Vec::new();
            for &scale in &config.renewable_scales {
                let scaled = EnergyTrace::new(
                    config
                        .supply
                        .samples()
                        .iter()
                        .map(|s| TraceSample { timestamp: s.timestamp, value: s.value * scale })
                        .collect(),
                    config.supply.resolution(),
                    config.supply.kind(),
                )
                .unwrap();
                for &capacity in &config.battery_capacities_j {
                    for device in &config.devices {
                        let scenario = Scenario {
                            supply: scaled.clone(),
                            device: device.clone(),
                            battery: Battery::new(capacity, capacity),
                            workload_ops: config.workload_ops,
                            dt_s: config.dt_s,
                            seed: 0,
                            grid_intensity: config.grid_intensity,
                        };
                        let result = run(&scenario).unwrap();
                        raw.push(ParetoPoint {
                            renewable_scale: scale,
                            battery_capacity_j: capacity,
                            volatility: device.volatility,
                            cost_j: device.tbe_j + capacity * config.battery_embodied_per_j,
                            weighted_shortfall_j: result.weighted_shortfall_j,
                            completion_time_s: result.completion_time_s.unwrap_or(f64::INFINITY),
                        });
                    }
                }
            }
            let mut want = brute_force_frontier(&raw);
            let mut got: Vec<[f64; 3]> =
                pareto_sweep(&config).unwrap().iter().map(|p| p.objectives()).collect();
            let key = |o: &[f64; 3]| (o[0].to_bits(), o[1].to_bits(), o[2].to_bits());
            want.sort_by_key(key);
            got.sort_by_key(key);
            // Duplicate objective vectors collapse to one frontier entry.
            want.dedup();
            assert_eq!(got, want, "seed {seed}");
        }
    }
}
