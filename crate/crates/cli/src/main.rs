//! Command-line front end: exploration tables, simulations, forecasting, and
//! quotes, all emitted as analysis-ready CSV/JSON.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 data error.
//! Every command is deterministic given its inputs and `--seed`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use evergrid_core::carbon::{BillingPolicy, MultiplierCurve};
use evergrid_core::estimator::{self, DeviceSpec, QuoteOverheads, TaskGraph};
use evergrid_core::forecast::{
    self, Dataset, ForecastSpec, RecurrentQuantileModel, TrainConfig,
};
use evergrid_core::frac::{self, PageGeometry};
use evergrid_core::ftlsim::{
    self, AccessPattern, ChipGeometry, DegradeMode, DegradePolicy, WearRange, Workload,
};
use evergrid_core::powersim::{self, Battery, DeviceModel, Scenario, SweepConfig};
use evergrid_core::traces::{load_trace, resample, EnergyTrace, TraceError, TraceKind};

const EXIT_INVALID: u8 = 2;
const EXIT_DATA: u8 = 3;

struct CliError {
    code: u8,
    message: String,
}

fn invalid(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_INVALID, message: message.into() }
}

fn data_err(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_DATA, message: message.into() }
}

fn trace_err(path: &Path, e: TraceError) -> CliError {
    data_err(format!("{}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| invalid(format!("cannot write {}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T, CliError> {
    let raw = read_file(path)?;
    serde_json::from_str(&raw)
        .map_err(|e| invalid(format!("{} file {} malformed: {e}", what, path.display())))
}

fn load_trace_file(path: &Path, kind: TraceKind) -> Result<EnergyTrace, CliError> {
    let raw = read_file(path)?;
    load_trace(&raw, kind).map_err(|e| trace_err(path, e))
}

#[derive(Parser)]
#[command(
    name = "evergrid",
    version,
    about = "Modeling and simulation toolkit for renewable-powered data centers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the fractional-cell exploration table (bits, utilization,
    /// capacity, endurance) for a fixed state count.
    Frac(FracArgs),
    /// Simulate accelerator forward progress under a supply trace.
    Simulate(SimulateArgs),
    /// Train the quantile forecaster or predict from a trained model.
    Forecast(ForecastArgs),
    /// Run the flash-chip lifetime simulation under a degradation policy.
    Ftl(FtlArgs),
    /// Produce an end-to-end task quote: placement, latency, energy, charge.
    Estimate(EstimateArgs),
    /// Sweep renewable scale, battery size, and device class; emit the
    /// non-dominated frontier.
    Pareto(ParetoArgs),
}

#[derive(Args)]
struct FracArgs {
    /// Threshold-voltage states per cell, 2..=8.
    #[arg(long)]
    m: u8,
    /// Largest group size to tabulate.
    #[arg(long, default_value_t = 8)]
    alpha_max: u32,
    #[arg(long, default_value_t = 10923)]
    cells_per_page: u32,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Whole-scenario JSON ({trace_csv, device, battery?, workload_ops,
    /// dt_s?, seed?, grid_intensity?}); replaces the individual flags.
    #[arg(long, conflicts_with_all = ["trace", "device", "battery", "workload_ops"])]
    scenario: Option<PathBuf>,
    /// Supply trace CSV (megawatts).
    #[arg(long, required_unless_present = "scenario")]
    trace: Option<PathBuf>,
    /// Device model JSON.
    #[arg(long, required_unless_present = "scenario")]
    device: Option<PathBuf>,
    /// Battery JSON (no battery when omitted).
    #[arg(long)]
    battery: Option<PathBuf>,
    /// Total operations in the workload.
    #[arg(long, required_unless_present = "scenario")]
    workload_ops: Option<f64>,
    /// Simulation step, seconds; must divide the trace resolution.
    #[arg(long, default_value_t = 60)]
    dt: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Timeline CSV output.
    #[arg(long)]
    out_timeline: PathBuf,
    /// Summary JSON output.
    #[arg(long)]
    out_summary: PathBuf,
}

/// On-disk scenario description; the trace lives in its own CSV.
#[derive(Deserialize)]
struct ScenarioFile {
    trace_csv: PathBuf,
    device: DeviceModel,
    #[serde(default)]
    battery: Option<Battery>,
    workload_ops: f64,
    #[serde(default = "default_dt")]
    dt_s: u64,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_intensity")]
    grid_intensity: f64,
}

fn default_seed() -> u64 {
    42
}

#[derive(Args)]
struct ForecastArgs {
    /// Renewable generation trace CSV.
    #[arg(long)]
    trace: PathBuf,
    /// Optional aligned demand trace CSV (net demand = demand - renewable;
    /// zero demand assumed when omitted).
    #[arg(long)]
    demand: Option<PathBuf>,
    /// Train a model and write it to --model.
    #[arg(long, conflicts_with = "predict")]
    train: bool,
    /// Predict from the model at --model.
    #[arg(long)]
    predict: bool,
    /// Model file path (output for --train, input for --predict).
    #[arg(long)]
    model: PathBuf,
    /// Output path: per-epoch loss CSV for --train, forecast CSV for
    /// --predict.
    #[arg(long)]
    out: PathBuf,
    /// Resample traces to this bin width (seconds) before use.
    #[arg(long)]
    resolution: Option<u64>,
    #[arg(long, default_value_t = 24)]
    history_window: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-2)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct FtlArgs {
    #[arg(long, default_value_t = 256)]
    blocks: u32,
    #[arg(long, default_value_t = 64)]
    pages_per_block: u32,
    #[arg(long, default_value_t = 10923)]
    cells_per_page: u32,
    /// Pre-recycle wear range, P/E cycles.
    #[arg(long, default_value_t = 2000)]
    wear_lo: u64,
    #[arg(long, default_value_t = 4000)]
    wear_hi: u64,
    /// Degradation policy.
    #[arg(long, value_enum)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 2816)]
    write_size: u32,
    /// Distinct logical pages; defaults to 80% of the chip's pages.
    #[arg(long)]
    span_pages: Option<u64>,
    #[arg(long, value_enum, default_value_t = PatternArg::Uniform)]
    pattern: PatternArg,
    #[arg(long, default_value_t = 0.99)]
    zipf_theta: f64,
    /// Optional cap on host writes.
    #[arg(long)]
    max_writes: Option<u64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Capacity timeline CSV output.
    #[arg(long)]
    out_timeline: PathBuf,
    /// Lifetime report JSON output.
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PolicyArg {
    Frac,
    FixedTlc,
    MlcToSlc,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PatternArg {
    Uniform,
    Zipf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Task graph JSON.
    #[arg(long)]
    task: PathBuf,
    /// Device catalog JSON (array of device specs).
    #[arg(long)]
    devices: PathBuf,
    /// Task start time, Unix seconds.
    #[arg(long)]
    start: i64,
    /// Demand trace CSV.
    #[arg(long)]
    demand: PathBuf,
    /// Renewable generation trace CSV.
    #[arg(long)]
    renewable: PathBuf,
    /// Trained forecaster for net-demand prediction (optional).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Billing policy preset.
    #[arg(long, value_enum, default_value_t = BillingArg::FlatRate)]
    policy: BillingArg,
    /// Full billing policy JSON; overrides --policy.
    #[arg(long)]
    policy_file: Option<PathBuf>,
    /// Price per joule for the presets.
    #[arg(long, default_value_t = 1.0)]
    price: f64,
    /// Recycled-hardware discount fraction for the recycled-discount preset.
    #[arg(long, default_value_t = 0.5)]
    discount: f64,
    /// Quote JSON output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BillingArg {
    FlatRate,
    CarbonAware,
    RecycledDiscount,
}

#[derive(Args)]
struct ParetoArgs {
    /// Sweep grid JSON.
    #[arg(long)]
    grid: PathBuf,
    /// Frontier CSV output.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Frac(args) => cmd_frac(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Ftl(args) => cmd_ftl(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Pareto(args) => cmd_pareto(args),
    }
}

fn cmd_frac(args: FracArgs) -> Result<(), CliError> {
    let geometry = PageGeometry { cells_per_page: args.cells_per_page };
    let rows = frac::frac_table(args.m, args.alpha_max, &geometry)
        .map_err(|e| invalid(e.to_string()))?;
    let mut csv = String::from("m,alpha,bits,utilization,capacity_bytes,endurance_multiplier\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.m, r.alpha, r.bits, r.utilization, r.capacity_bytes, r.endurance_multiplier
        ));
    }
    match args.out {
        Some(path) => write_file(&path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let scenario = match &args.scenario {
        Some(path) => {
            let file: ScenarioFile = parse_json(path, "scenario")?;
            let supply = load_trace_file(&file.trace_csv, TraceKind::RenewableGeneration)?;
            let mut s = Scenario::new(
                supply,
                file.device,
                file.battery.unwrap_or_else(Battery::none),
                file.workload_ops,
            );
            s.dt_s = file.dt_s;
            s.seed = file.seed;
            s.grid_intensity = file.grid_intensity;
            s
        }
        None => {
            let supply =
                load_trace_file(args.trace.as_ref().unwrap(), TraceKind::RenewableGeneration)?;
            let device: DeviceModel = parse_json(args.device.as_ref().unwrap(), "device")?;
            let battery: Battery = match &args.battery {
                Some(path) => parse_json(path, "battery")?,
                None => Battery::none(),
            };
            let mut s =
                Scenario::new(supply, device, battery, args.workload_ops.unwrap());
            s.dt_s = args.dt;
            s.seed = args.seed;
            s
        }
    };
    let result = powersim::run(&scenario).map_err(|e| match e {
        powersim::SimError::IrregularTrace { .. } => data_err(e.to_string()),
        other => invalid(other.to_string()),
    })?;
    write_file(&args.out_timeline, &powersim::timeline_csv(&result.timeline))?;
    let summary = serde_json::json!({
        "completion_time_s": result.completion_time_s,
        "final_ops": result.final_ops,
        "rollback_count": result.rollback_count,
        "rolled_back_ops": result.rolled_back_ops,
        "energy_consumed_j": result.energy_consumed_j,
        "operational_energy_j": result.operational_energy_j,
        "embodied_energy_j": result.embodied_energy_j,
        "weighted_shortfall_j": result.weighted_shortfall_j,
    });
    write_file(&args.out_summary, &format!("{:#}\n", summary))
}

fn forecast_dataset(args: &ForecastArgs) -> Result<Dataset, CliError> {
    let mut renewable = load_trace_file(&args.trace, TraceKind::RenewableGeneration)?;
    let mut demand = match &args.demand {
        Some(path) => Some(load_trace_file(path, TraceKind::Demand)?),
        None => None,
    };
    if let Some(res) = args.resolution {
        renewable = resample(&renewable, res).map_err(|e| trace_err(&args.trace, e))?;
        if let Some(d) = demand.take() {
            demand =
                Some(resample(&d, res).map_err(|e| trace_err(args.demand.as_ref().unwrap(), e))?);
        }
    }
    Dataset::from_traces(&renewable, demand.as_ref(), None).map_err(|e| data_err(e.to_string()))
}

fn cmd_forecast(args: ForecastArgs) -> Result<(), CliError> {
    if args.train == args.predict {
        return Err(invalid("exactly one of --train or --predict is required"));
    }
    let dataset = forecast_dataset(&args)?;
    let spec = ForecastSpec { history_window: args.history_window, ..ForecastSpec::default() };
    if args.train {
        let config = TrainConfig {
            learning_rate: args.learning_rate,
            epochs: args.epochs,
            batch_size: args.batch_size,
            hidden_size: args.hidden,
            seed: args.seed,
        };
        let (model, report) =
            forecast::train(&dataset, &spec, &config).map_err(|e| data_err(e.to_string()))?;
        write_file(&args.model, &model.to_json())?;
        let mut log = String::from("epoch,train_loss,val_loss\n");
        for e in &report.epochs {
            log.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        write_file(&args.out, &log)?;
        let (model_p50, persistence_p50) = forecast::evaluate_test_p50(&model, &dataset, &spec)
            .map_err(|e| data_err(e.to_string()))?;
        println!(
            "trained {} epochs; test P50 pinball loss {model_p50} vs persistence {persistence_p50}",
            report.epochs.len()
        );
        Ok(())
    } else {
        let raw = read_file(&args.model)?;
        let model =
            RecurrentQuantileModel::from_json(&raw).map_err(|e| data_err(e.to_string()))?;
        let anchor = dataset.bins().len() - 1;
        let forecast = model
            .predict_at(&dataset, anchor)
            .map_err(|e| data_err(e.to_string()))?;
        write_file(&args.out, &forecast.to_csv())
    }
}

fn cmd_ftl(args: FtlArgs) -> Result<(), CliError> {
    let geometry = ChipGeometry {
        blocks_per_chip: args.blocks,
        pages_per_block: args.pages_per_block,
        cells_per_page: args.cells_per_page,
    };
    let wear = WearRange { lo: args.wear_lo, hi: args.wear_hi };
    let chip =
        ftlsim::init_chip(geometry, wear, args.seed).map_err(|e| invalid(e.to_string()))?;
    let policy = match args.policy {
        PolicyArg::Frac => DegradePolicy::frac(),
        PolicyArg::FixedTlc => DegradePolicy::fixed_tlc(),
        PolicyArg::MlcToSlc => DegradePolicy::mlc_to_slc(),
    };
    debug_assert!(matches!(
        policy.mode,
        DegradeMode::Frac | DegradeMode::FixedTlc | DegradeMode::MlcToSlc
    ));
    let total_pages = geometry.blocks_per_chip as u64 * geometry.pages_per_block as u64;
    let workload = Workload {
        pattern: match args.pattern {
            PatternArg::Uniform => AccessPattern::Uniform,
            PatternArg::Zipf => AccessPattern::Zipf,
        },
        zipf_theta: args.zipf_theta,
        write_size_bytes: args.write_size,
        logical_span_pages: args.span_pages.unwrap_or(total_pages * 8 / 10),
        max_host_writes: args.max_writes,
    };
    let report = ftlsim::run_lifetime(chip, &workload, policy, args.seed)
        .map_err(|e| invalid(e.to_string()))?;
    write_file(&args.out_timeline, &report.to_csv())?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| invalid(format!("report serialization: {e}")))?;
    write_file(&args.out_report, &format!("{json}\n"))
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let graph: TaskGraph = parse_json(&args.task, "task graph")?;
    let devices: Vec<DeviceSpec> = parse_json(&args.devices, "device catalog")?;
    let demand = load_trace_file(&args.demand, TraceKind::Demand)?;
    let renewable = load_trace_file(&args.renewable, TraceKind::RenewableGeneration)?;
    let model = match &args.model {
        Some(path) => {
            let raw = read_file(path)?;
            Some(RecurrentQuantileModel::from_json(&raw).map_err(|e| data_err(e.to_string()))?)
        }
        None => None,
    };
    let policy = match &args.policy_file {
        Some(path) => parse_json(path, "billing policy")?,
        None => match args.policy {
            BillingArg::FlatRate => BillingPolicy::FlatRate { price_per_joule: args.price },
            BillingArg::CarbonAware => BillingPolicy::CarbonAware {
                base_price_per_joule: args.price,
                multiplier: MultiplierCurve::new(vec![(0.0, 1.0), (10.0, 2.0), (100.0, 4.0)])
                    .expect("valid default curve"),
            },
            BillingArg::RecycledDiscount => BillingPolicy::RecycledDiscount {
                inner: Box::new(BillingPolicy::FlatRate { price_per_joule: args.price }),
                discount: args.discount,
            },
        },
    };
    let quote = estimator::ese_quote(
        &graph,
        &devices,
        args.start,
        &demand,
        &renewable,
        model.as_ref(),
        &policy,
        QuoteOverheads::default(),
    )
    .map_err(|e| match e {
        estimator::EstimatorError::Coverage(_) | estimator::EstimatorError::Forecast(_) => {
            data_err(e.to_string())
        }
        other => invalid(other.to_string()),
    })?;
    let json = serde_json::to_string_pretty(&quote)
        .map_err(|e| invalid(format!("quote serialization: {e}")))?;
    write_file(&args.out, &format!("{json}\n"))
}

/// On-disk sweep description; the supply trace lives in its own CSV.
#[derive(Deserialize)]
struct GridFile {
    supply_csv: PathBuf,
    workload_ops: f64,
    #[serde(default = "default_dt")]
    dt_s: u64,
    renewable_scales: Vec<f64>,
    battery_capacities_j: Vec<f64>,
    devices: Vec<DeviceModel>,
    #[serde(default = "default_battery_embodied")]
    battery_embodied_per_j: f64,
    #[serde(default = "default_intensity")]
    grid_intensity: f64,
}

fn default_dt() -> u64 {
    60
}

fn default_battery_embodied() -> f64 {
    25.0
}

fn default_intensity() -> f64 {
    1.0
}

fn cmd_pareto(args: ParetoArgs) -> Result<(), CliError> {
    let grid: GridFile = parse_json(&args.grid, "grid")?;
    if grid.renewable_scales.is_empty() || grid.battery_capacities_j.is_empty() || grid.devices.is_empty()
    {
        return Err(invalid("grid axes must be non-empty"));
    }
    let supply = load_trace_file(&grid.supply_csv, TraceKind::RenewableGeneration)?;
    let config = SweepConfig {
        supply,
        workload_ops: grid.workload_ops,
        dt_s: grid.dt_s,
        renewable_scales: grid.renewable_scales,
        battery_capacities_j: grid.battery_capacities_j,
        devices: grid.devices,
        battery_embodied_per_j: grid.battery_embodied_per_j,
        grid_intensity: grid.grid_intensity,
    };
    let frontier = powersim::pareto_sweep(&config).map_err(|e| invalid(e.to_string()))?;
    let mut csv = String::from(
        "renewable_scale,battery_capacity_j,volatility,cost_j,weighted_shortfall_j,completion_time_s\n",
    );
    for p in &frontier {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.renewable_scale,
            p.battery_capacity_j,
            p.volatility,
            p.cost_j,
            p.weighted_shortfall_j,
            p.completion_time_s
        ));
    }
    write_file(&args.out, &csv)
}
