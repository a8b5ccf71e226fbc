//! End-to-end command tests through the compiled binary: exit codes, file
//! outputs, and the documented error classes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evergrid"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn sine_trace(bins: usize) -> String {
    let mut csv = String::from("timestamp,value\n");
    for i in 0..bins {
        let t = i as f64 * 300.0;
        let v = 50.0 + 20.0 * (2.0 * std::f64::consts::PI * t / 86_400.0).sin();
        csv.push_str(&format!("{},{}\n", i * 300, v));
    }
    csv
}

fn square_supply(bins: usize, on_mw: f64) -> String {
    let mut csv = String::from("timestamp,value\n");
    for i in 0..bins {
        let v = if i % 2 == 0 { on_mw } else { 0.0 };
        csv.push_str(&format!("{},{}\n", i * 1800, v));
    }
    csv
}

fn device_json(volatility: &str, state_loss: f64) -> String {
    format!(
        r#"{{"volatility":"{volatility}","peak_power_w":200.0,"threshold_power_w":50.0,
            "peak_throughput_ops":1e9,"checkpoint_interval_s":14400.0,"checkpoint_cost_j":80000.0,
            "resume_penalty_s":60.0,"state_loss_fraction":{state_loss},"tbe_j":5e8,
            "lifetime_s":157788000.0}}"#
    )
}

fn devices_catalog() -> &'static str {
    r#"[
      {"kind":"CPU","peak_flops":1e9,"mem_bandwidth":4e9,"host_link_bandwidth":1e9,
       "unit":{"id":"cpu0","kind":"CPU","tbe_j":1e9,"lifetime_s":1.5768e8,
               "power_active_w":95.0,"power_idle_w":20.0,"recycled":false}},
      {"kind":"GPU","peak_flops":1e10,"mem_bandwidth":4e10,"host_link_bandwidth":1e9,
       "unit":{"id":"gpu0","kind":"GPU","tbe_j":2e9,"lifetime_s":1.5768e8,
               "power_active_w":250.0,"power_idle_w":30.0,"recycled":false}},
      {"kind":"PIM","peak_flops":5e9,"mem_bandwidth":1e11,"host_link_bandwidth":1e9,
       "unit":{"id":"pim0","kind":"PIM","tbe_j":5e8,"lifetime_s":1.5768e8,
               "power_active_w":60.0,"power_idle_w":5.0,"recycled":true}}
    ]"#
}

fn flat_trace(bins: usize, value: f64) -> String {
    let mut csv = String::from("timestamp,value\n");
    for i in 0..bins {
        csv.push_str(&format!("{},{}\n", i * 300, value));
    }
    csv
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["frac", "simulate", "forecast", "ftl", "estimate", "pareto"] {
        let out = bin().args([sub, "--help"]).output().unwrap();
        assert!(out.status.success(), "{sub} --help failed");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--"), "{sub} help lists no flags");
    }
}

#[test]
fn frac_table_anchor_row() {
    let out = bin().args(["frac", "--m", "3", "--alpha-max", "7"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let row = text.lines().find(|l| l.starts_with("3,7,")).expect("alpha=7 row");
    assert!(row.starts_with("3,7,11,"), "row {row}");
}

#[test]
fn frac_single_alpha_utilization_one() {
    let out = bin().args(["frac", "--m", "2", "--alpha-max", "1"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("2,1,1,1,"));
}

#[test]
fn frac_rejects_bad_state_count() {
    let out = bin().args(["frac", "--m", "9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn simulate_constant_supply_no_rollbacks() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "supply.csv", &flat_trace(8, 0.0002));
    write(dir.path(), "device.json", &device_json("volatile_checkpointed", 0.5));
    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--trace",
            "supply.csv",
            "--device",
            "device.json",
            "--workload-ops",
            "1e12",
            "--out-timeline",
            "tl.csv",
            "--out-summary",
            "sum.json",
        ],
    );
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sum.json")).unwrap())
            .unwrap();
    assert_eq!(summary["rollback_count"], 0);
    assert!(summary["completion_time_s"].as_f64().is_some());
}

#[test]
fn simulate_missing_trace_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "device.json", &device_json("fully_nonvolatile", 0.0));
    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--trace",
            "nope.csv",
            "--device",
            "device.json",
            "--workload-ops",
            "1e12",
            "--out-timeline",
            "tl.csv",
            "--out-summary",
            "sum.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_gappy_trace_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    // 1800 s steps with one missing bin: a gap at the trace's resolution.
    write(
        dir.path(),
        "supply.csv",
        "timestamp,value\n0,0.0002\n1800,0.0002\n7200,0.0002\n",
    );
    write(dir.path(), "device.json", &device_json("fully_nonvolatile", 0.0));
    let out = run_in(
        dir.path(),
        &[
            "simulate", "--trace", "supply.csv", "--device", "device.json",
            "--workload-ops", "1e12", "--out-timeline", "tl.csv", "--out-summary", "sum.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gap"));
}

#[test]
fn simulate_accepts_whole_scenario_json() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "supply.csv", &flat_trace(8, 0.0002));
    let device = device_json("fully_nonvolatile", 0.0);
    write(
        dir.path(),
        "scenario.json",
        &format!(
            r#"{{"trace_csv":"supply.csv","device":{device},"workload_ops":1e12,"dt_s":60}}"#
        ),
    );
    let out = run_in(
        dir.path(),
        &[
            "simulate", "--scenario", "scenario.json", "--out-timeline", "tl.csv",
            "--out-summary", "sum.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sum.json")).unwrap())
            .unwrap();
    assert!(summary["completion_time_s"].as_f64().is_some());
}

#[test]
fn forecast_predict_with_short_history_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "wind.csv", &sine_trace(400));
    let out = run_in(
        dir.path(),
        &[
            "forecast", "--trace", "wind.csv", "--train", "--model", "model.json",
            "--out", "losses.csv", "--epochs", "5", "--hidden", "4",
        ],
    );
    assert!(out.status.success());
    // Too few bins to fill the model's history window.
    write(dir.path(), "short.csv", &sine_trace(10));
    let out = run_in(
        dir.path(),
        &[
            "forecast", "--trace", "short.csv", "--predict", "--model", "model.json",
            "--out", "fc.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_square_wave_preserves_class_order() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "supply.csv", &square_supply(24, 0.0002));
    let mut finals = Vec::new();
    for (name, volatility, loss) in [
        ("fnv", "fully_nonvolatile", 0.0),
        ("pnv", "partially_nonvolatile", 0.5),
        ("vc", "volatile_checkpointed", 0.5),
    ] {
        write(dir.path(), &format!("{name}.json"), &device_json(volatility, loss));
        let out = run_in(
            dir.path(),
            &[
                "simulate",
                "--trace",
                "supply.csv",
                "--device",
                &format!("{name}.json"),
                "--workload-ops",
                "1e15",
                "--out-timeline",
                &format!("{name}_tl.csv"),
                "--out-summary",
                &format!("{name}.json.out"),
            ],
        );
        assert!(out.status.success());
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("{name}.json.out"))).unwrap(),
        )
        .unwrap();
        finals.push(summary["final_ops"].as_f64().unwrap());
    }
    assert!(finals[0] >= finals[1] && finals[1] >= finals[2], "{finals:?}");
}

#[test]
fn forecast_short_dataset_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "wind.csv", &sine_trace(10));
    let out = run_in(
        dir.path(),
        &[
            "forecast", "--trace", "wind.csv", "--train", "--model", "m.json", "--out", "l.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn forecast_train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "wind.csv", &sine_trace(400));
    let out = run_in(
        dir.path(),
        &[
            "forecast",
            "--trace",
            "wind.csv",
            "--train",
            "--model",
            "model.json",
            "--out",
            "losses.csv",
            "--epochs",
            "40",
            "--hidden",
            "8",
        ],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("persistence"), "training summary printed: {stdout}");
    let losses = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert!(losses.lines().count() > 40);

    let out = run_in(
        dir.path(),
        &[
            "forecast",
            "--trace",
            "wind.csv",
            "--predict",
            "--model",
            "model.json",
            "--out",
            "fc.csv",
        ],
    );
    assert!(out.status.success());
    let fc = std::fs::read_to_string(dir.path().join("fc.csv")).unwrap();
    assert_eq!(fc.lines().next().unwrap(), "issued_at,target,horizon_min,quantile,value_mw");
    assert_eq!(fc.lines().count(), 1 + 42);
}

#[test]
fn ftl_policies_compare() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for policy in ["frac", "fixed-tlc"] {
        let timeline = format!("{policy}_tl.csv");
        let report_path = format!("{policy}.json");
        let out = run_in(
            dir.path(),
            &[
                "ftl", "--blocks", "64", "--pages-per-block", "32", "--wear-lo", "2000",
                "--wear-hi", "4000", "--policy", policy, "--out-timeline", &timeline,
                "--out-report", &report_path,
            ],
        );
        assert!(out.status.success(), "{policy}: {}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("{policy}.json"))).unwrap(),
        )
        .unwrap();
        bytes.push(report["total_host_bytes_written"].as_u64().unwrap());
    }
    assert!(bytes[0] > bytes[1] * 12 / 10, "frac {} vs fixed {}", bytes[0], bytes[1]);
}

#[test]
fn ftl_mlc_to_slc_has_single_halving() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "ftl",
            "--blocks",
            "64",
            "--pages-per-block",
            "32",
            "--policy",
            "mlc-to-slc",
            "--write-size",
            "1024",
            "--span-pages",
            "819",
            "--max-writes",
            "300000",
            "--out-timeline",
            "tl.csv",
            "--out-report",
            "rep.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tl = std::fs::read_to_string(dir.path().join("tl.csv")).unwrap();
    let mut caps: Vec<u64> = tl
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    caps.dedup();
    assert_eq!(caps.len(), 2, "{caps:?}");
    let drop = caps[0] as f64 / 2.0 - caps[1] as f64;
    assert!(drop.abs() <= 4096.0 * 64.0, "not a 50% step: {caps:?}");
}

#[test]
fn ftl_pristine_chip_no_degradation() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "ftl",
            "--blocks",
            "16",
            "--pages-per-block",
            "8",
            "--wear-lo",
            "0",
            "--wear-hi",
            "0",
            "--policy",
            "frac",
            "--write-size",
            "1024",
            "--span-pages",
            "64",
            "--max-writes",
            "5000",
            "--out-timeline",
            "tl.csv",
            "--out-report",
            "rep.json",
        ],
    );
    assert!(out.status.success());
    let tl = std::fs::read_to_string(dir.path().join("tl.csv")).unwrap();
    let caps: std::collections::BTreeSet<&str> =
        tl.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(caps.len(), 1, "capacity changed on a pristine chip");
}

#[test]
fn estimate_zero_work_flat_rate_charges_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "task.json", r#"{"expected_latency_s":1.0,"kernels":[{"id":"nop","flops":0.0,"bytes_r":0.0,"bytes_w":0.0,"deps":[]}]}"#);
    write(dir.path(), "devices.json", devices_catalog());
    write(dir.path(), "demand.csv", &flat_trace(10, 5.0));
    write(dir.path(), "renew.csv", &flat_trace(10, 2.0));
    let out = run_in(
        dir.path(),
        &[
            "estimate", "--task", "task.json", "--devices", "devices.json", "--start", "300",
            "--demand", "demand.csv", "--renewable", "renew.csv", "--out", "quote.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let quote: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("quote.json")).unwrap())
            .unwrap();
    assert_eq!(quote["charge_credits"], 0.0);
    assert_eq!(quote["met_qos"], true);
}

#[test]
fn estimate_full_recycled_discount_zeroes_embodied_term() {
    let dir = tempfile::tempdir().unwrap();
    // Single all-recycled device catalog.
    write(
        dir.path(),
        "devices.json",
        r#"[{"kind":"CPU","peak_flops":1e9,"mem_bandwidth":4e9,"host_link_bandwidth":1e9,
             "unit":{"id":"cpu0","kind":"CPU","tbe_j":1e9,"lifetime_s":1.5768e8,
                     "power_active_w":95.0,"power_idle_w":20.0,"recycled":true}}]"#,
    );
    write(dir.path(), "task.json", r#"{"expected_latency_s":10.0,"kernels":[{"id":"k","flops":1e9,"bytes_r":0.0,"bytes_w":0.0,"deps":[]}]}"#);
    write(dir.path(), "demand.csv", &flat_trace(10, 5.0));
    write(dir.path(), "renew.csv", &flat_trace(10, 2.0));
    let run_with = |policy: &[&str], out_name: &str| {
        let mut args = vec![
            "estimate", "--task", "task.json", "--devices", "devices.json", "--start", "300",
            "--demand", "demand.csv", "--renewable", "renew.csv", "--out", out_name,
        ];
        args.extend_from_slice(policy);
        let out = run_in(dir.path(), &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let quote: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(out_name)).unwrap())
                .unwrap();
        quote
    };
    let flat = run_with(&["--policy", "flat-rate", "--price", "1.0"], "flat.json");
    let discounted = run_with(
        &["--policy", "recycled-discount", "--price", "1.0", "--discount", "1.0"],
        "disc.json",
    );
    let e_ope = flat["e_ope_j"].as_f64().unwrap();
    let e_emb = flat["e_emb_j"].as_f64().unwrap();
    assert!(e_emb > 0.0);
    let flat_charge = flat["charge_credits"].as_f64().unwrap();
    let disc_charge = discounted["charge_credits"].as_f64().unwrap();
    assert!((flat_charge - (e_ope + e_emb)).abs() < 1e-9);
    assert!((disc_charge - e_ope).abs() < 1e-9, "embodied term should vanish");
}

#[test]
fn estimate_unmet_qos_still_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "task.json", r#"{"expected_latency_s":1e-9,"kernels":[{"id":"k","flops":1e12,"bytes_r":0.0,"bytes_w":0.0,"deps":[]}]}"#);
    write(dir.path(), "devices.json", devices_catalog());
    write(dir.path(), "demand.csv", &flat_trace(2000, 5.0));
    write(dir.path(), "renew.csv", &flat_trace(2000, 2.0));
    let out = run_in(
        dir.path(),
        &[
            "estimate", "--task", "task.json", "--devices", "devices.json", "--start", "300",
            "--demand", "demand.csv", "--renewable", "renew.csv", "--out", "quote.json",
        ],
    );
    assert!(out.status.success());
    let quote: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("quote.json")).unwrap())
            .unwrap();
    assert_eq!(quote["met_qos"], false);
}

#[test]
fn pareto_empty_grid_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "supply.csv", &square_supply(8, 0.0002));
    write(
        dir.path(),
        "grid.json",
        r#"{"supply_csv":"supply.csv","workload_ops":1e12,"renewable_scales":[],
            "battery_capacities_j":[0.0],"devices":[]}"#,
    );
    let out = run_in(dir.path(), &["pareto", "--grid", "grid.json", "--out", "f.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pareto_emits_nondominated_rows() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "supply.csv", &square_supply(24, 0.0002));
    let dev = device_json("fully_nonvolatile", 0.0);
    write(
        dir.path(),
        "grid.json",
        &format!(
            r#"{{"supply_csv":"supply.csv","workload_ops":4e12,
                 "renewable_scales":[0.5,1.0,1.5],"battery_capacities_j":[0.0,500000.0],
                 "devices":[{dev}]}}"#
        ),
    );
    let out = run_in(dir.path(), &["pareto", "--grid", "grid.json", "--out", "frontier.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let frontier = std::fs::read_to_string(dir.path().join("frontier.csv")).unwrap();
    assert!(frontier.lines().count() >= 2);
}
