//! Browser bindings for three interactive views: the fractional-cell
//! capacity/endurance tradeoff, a forward-progress race between volatility
//! classes under fluctuating supply, and the random-bit debias controller.
//!
//! Every export takes plain numbers and returns a JSON string, so the same
//! functions run under the wasm target and in host tests. Errors come back
//! as `{"error": "..."}` rather than exceptions.

use wasm_bindgen::prelude::*;

use evergrid_core::frac::{self, PageGeometry};
use evergrid_core::pimfunc::{trg_next_segment, TrgState, TRG_SEGMENT_BITS};
use evergrid_core::powersim::{
    compare_classes, random_on_off_trace, Battery, ClassComparisonConfig, DeviceModel, Volatility,
};

fn err_json(message: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": message.to_string() }).to_string()
}

/// Fractional-cell exploration rows for one state count: bits per group,
/// utilization, page capacity, and the endurance multiplier.
#[wasm_bindgen]
pub fn frac_table_json(m: u8, alpha_max: u32) -> String {
    match frac::frac_table(m, alpha_max, &PageGeometry::default()) {
        Ok(rows) => serde_json::json!({
            "m": m,
            "rows": rows,
        })
        .to_string(),
        Err(e) => err_json(e),
    }
}

/// Page capacity and endurance across the whole state-count ladder at each
/// state count's best group size, for the tradeoff curve.
#[wasm_bindgen]
pub fn frac_ladder_json() -> String {
    let geometry = PageGeometry::default();
    let rows: Vec<serde_json::Value> = (2..=8u8)
        .map(|m| {
            let alpha = frac::best_alpha(m, 8).expect("valid m");
            let capacity = frac::page_capacity_bytes(m, alpha, &geometry).expect("valid spec");
            serde_json::json!({
                "m": m,
                "alpha": alpha,
                "bits": frac::bits_per_group(m, alpha).expect("valid spec"),
                "capacity_bytes": capacity,
                "endurance_multiplier": frac::endurance_multiplier(m).expect("valid m"),
            })
        })
        .collect();
    serde_json::json!({ "rows": rows }).to_string()
}

/// Forward-progress race of the three volatility classes over a seeded
/// random on/off supply. Returns probe times, per-class progress fractions,
/// rollback counts, and the supply itself (watts) for plotting.
#[wasm_bindgen]
pub fn progress_race_json(
    seed: u64,
    hours: u32,
    battery_capacity_j: f64,
    threshold_fraction: f64,
) -> String {
    if !(0.0..=1.0).contains(&threshold_fraction) {
        return err_json("threshold fraction must lie in [0, 1]");
    }
    let bins = (hours.clamp(1, 168) * 2) as usize; // half-hour bins
    let mut base = DeviceModel::reference(Volatility::FullyNonvolatile);
    base.threshold_power_w = threshold_fraction * base.peak_power_w;
    let supply = random_on_off_trace(seed, bins, 1800, base.peak_power_w);
    let battery = if battery_capacity_j > 0.0 {
        Battery::new(battery_capacity_j, battery_capacity_j)
    } else {
        Battery::none()
    };
    let config = ClassComparisonConfig {
        workload_ops: base.peak_throughput_ops * bins as f64 * 1800.0,
        dt_s: 60,
        battery,
        base_device: base.clone(),
    };
    match compare_classes(&supply, &config) {
        Ok(comparison) => serde_json::json!({
            "probe_times_s": comparison.probe_times_s,
            "classes": comparison.classes,
            "supply_w": supply.values().map(|mw| mw * 1.0e6).collect::<Vec<f64>>(),
            "peak_power_w": base.peak_power_w,
            "threshold_power_w": base.threshold_power_w,
        })
        .to_string(),
        Err(e) => err_json(e),
    }
}

/// Debias controller trajectory: per-segment bias and ones fraction from a
/// given starting bias and controller gain.
#[wasm_bindgen]
pub fn trg_debias_json(initial_bias: f64, gain: f64, segments: u32, seed: u64) -> String {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut state = TrgState::new(initial_bias, gain);
    let segments = segments.clamp(1, 8192) as usize;
    let mut bias = Vec::with_capacity(segments);
    let mut ones_fraction = Vec::with_capacity(segments);
    for _ in 0..segments {
        bias.push(state.bias);
        let (segment, next) = trg_next_segment(state, &mut rng);
        ones_fraction.push(segment.ones as f64 / TRG_SEGMENT_BITS as f64);
        state = next;
    }
    serde_json::json!({
        "segment_bits": TRG_SEGMENT_BITS,
        "bias": bias,
        "ones_fraction": ones_fraction,
    })
    .to_string()
}
