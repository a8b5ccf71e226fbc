//! Quantile forecasting of renewable generation and net energy demand.
//!
//! A single recurrent (tanh) layer reads a window of standardized values plus
//! calendar features and a linear head emits one value per
//! (target, horizon, quantile) triple. Training minimizes the mean pinball
//! loss summed over all outputs with plain full-precision gradient descent at
//! a fixed learning rate: no adaptivity, no shuffling, bit-reproducible from
//! the seed. Quantile crossings are repaired by rearrangement (sorting),
//! which preserves the marginal optimum of each quantile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traces::{calendar_features, EnergyTrace};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Standardization floor keeps constant series from dividing by zero.
const STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("tau {0} outside (0, 1)")]
    BadTau(f64),
    #[error("dataset too short: need at least {need} bins, got {got}")]
    DatasetTooShort { need: usize, got: usize },
    #[error("dataset split leaves an empty partition (got {got} samples)")]
    EmptySplit { got: usize },
    #[error("history must be exactly {want} bins, got {got}")]
    WrongHistoryLength { want: usize, got: usize },
    #[error("history must not be empty")]
    EmptyHistory,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("traces are misaligned")]
    Misaligned,
    #[error("trace has gaps; resample before building a dataset")]
    GappyTrace,
    #[error("horizon {horizon_min} min is not a whole number of {resolution} s bins")]
    HorizonResolution { horizon_min: u32, resolution: u64 },
    #[error("bad forecast spec: {0}")]
    BadSpec(String),
    #[error("unsupported model format version {0}")]
    BadVersion(u32),
    #[error("model file malformed: {0}")]
    Malformed(String),
}

/// Quantile grid, horizons, and input window of a forecaster.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ForecastSpec {
    /// Strictly increasing probabilities in (0, 1).
    pub quantiles: Vec<f64>,
    /// Lead times in minutes, positive and increasing.
    pub horizons_min: Vec<u32>,
    /// Number of past bins fed to the recurrent layer.
    pub history_window: usize,
}

impl Default for ForecastSpec {
    fn default() -> Self {
        Self {
            quantiles: vec![0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975],
            horizons_min: vec![5, 10, 15],
            history_window: 24,
        }
    }
}

impl ForecastSpec {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|&q| !(0.0 < q && q < 1.0))
            || self.quantiles.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(ForecastError::BadSpec(
                "quantiles must be strictly increasing within (0,1)".into(),
            ));
        }
        if self.horizons_min.is_empty()
            || self.horizons_min[0] == 0
            || self.horizons_min.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(ForecastError::BadSpec("horizons must be positive and increasing".into()));
        }
        if self.history_window == 0 {
            return Err(ForecastError::BadSpec("history window must be positive".into()));
        }
        Ok(())
    }

    fn horizon_bins(&self, resolution: u64) -> Result<Vec<usize>, ForecastError> {
        self.horizons_min
            .iter()
            .map(|&h| {
                let seconds = h as u64 * 60;
                if !seconds.is_multiple_of(resolution) {
                    Err(ForecastError::HorizonResolution { horizon_min: h, resolution })
                } else {
                    Ok((seconds / resolution) as usize)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Renewable,
    NetDemand,
}

pub const TARGETS: [Target; 2] = [Target::Renewable, Target::NetDemand];

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Renewable => write!(f, "renewable"),
            Target::NetDemand => write!(f, "net_demand"),
        }
    }
}

/// One time bin of model input: both target series plus an optional
/// exogenous covariate (e.g. wind speed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetBin {
    pub timestamp: i64,
    pub renewable_mw: f64,
    pub net_demand_mw: f64,
    pub exog: Option<f64>,
}

/// Gap-free, regularly sampled model input.
#[derive(Debug, Clone)]
pub struct Dataset {
    bins: Vec<DatasetBin>,
    resolution: u64,
    has_exog: bool,
}

impl Dataset {
    pub fn new(bins: Vec<DatasetBin>, resolution: u64) -> Result<Self, ForecastError> {
        if bins.is_empty() {
            return Err(ForecastError::EmptyHistory);
        }
        let has_exog = bins[0].exog.is_some();
        if bins.iter().any(|b| b.exog.is_some() != has_exog) {
            return Err(ForecastError::Malformed("exogenous column must be all-or-none".into()));
        }
        if bins
            .windows(2)
            .any(|w| w[1].timestamp - w[0].timestamp != resolution as i64)
        {
            return Err(ForecastError::GappyTrace);
        }
        Ok(Self { bins, resolution, has_exog })
    }

    /// Builds a dataset from a renewable trace, an optional aligned demand
    /// trace (net demand = demand - renewable; zero demand when absent), and
    /// an optional aligned exogenous covariate trace.
    pub fn from_traces(
        renewable: &EnergyTrace,
        demand: Option<&EnergyTrace>,
        exog: Option<&EnergyTrace>,
    ) -> Result<Self, ForecastError> {
        if let Some(d) = demand {
            if !d.aligned_with(renewable) {
                return Err(ForecastError::Misaligned);
            }
        }
        if let Some(e) = exog {
            if !e.aligned_with(renewable) {
                return Err(ForecastError::Misaligned);
            }
        }
        let bins = renewable
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| DatasetBin {
                timestamp: s.timestamp,
                renewable_mw: s.value,
                net_demand_mw: demand.map(|d| d.samples()[i].value).unwrap_or(0.0) - s.value,
                exog: exog.map(|e| e.samples()[i].value),
            })
            .collect();
        Self::new(bins, renewable.resolution())
    }

    pub fn bins(&self) -> &[DatasetBin] {
        &self.bins
    }

    pub fn resolution(&self) -> u64 {
        self.resolution
    }

    pub fn has_exog(&self) -> bool {
        self.has_exog
    }
}

/// The standard quantile (pinball) loss max(tau*e, (tau-1)*e).
pub fn pinball_loss(error: f64, tau: f64) -> Result<f64, ForecastError> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(ForecastError::BadTau(tau));
    }
    Ok((tau * error).max((tau - 1.0) * error))
}

/// d(pinball)/d(error); the subgradient at zero takes the left branch.
fn pinball_grad(error: f64, tau: f64) -> f64 {
    if error > 0.0 {
        tau
    } else {
        tau - 1.0
    }
}

/// Sorts raw per-quantile values so they are non-decreasing in the quantile
/// level; the multiset of values is preserved.
pub fn rearrange_quantiles(raw: &[f64]) -> Vec<f64> {
    let mut sorted = raw.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite quantile values"));
    sorted
}

/// Per-channel affine normalization fitted on the training split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt().max(STD_FLOOR) }
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// All quantile predictions issued at one instant, de-standardized, monotone
/// in the quantile level per (target, horizon).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub issued_at: i64,
    pub quantiles: Vec<f64>,
    pub horizons_min: Vec<u32>,
    /// Indexed `[target][horizon][quantile]`, flattened.
    values_mw: Vec<f64>,
}

impl QuantileForecast {
    fn from_raw(issued_at: i64, spec: &ForecastSpec, raw: &[f64]) -> Self {
        let nq = spec.quantiles.len();
        let nh = spec.horizons_min.len();
        debug_assert_eq!(raw.len(), 2 * nh * nq);
        let mut values_mw = Vec::with_capacity(raw.len());
        for chunk in raw.chunks(nq) {
            values_mw.extend(rearrange_quantiles(chunk));
        }
        Self {
            issued_at,
            quantiles: spec.quantiles.clone(),
            horizons_min: spec.horizons_min.clone(),
            values_mw,
        }
    }

    pub fn horizons(&self) -> &[u32] {
        &self.horizons_min
    }

    fn target_index(target: Target) -> usize {
        match target {
            Target::Renewable => 0,
            Target::NetDemand => 1,
        }
    }

    pub fn value(&self, target: Target, horizon_min: u32, quantile: f64) -> Option<f64> {
        let h = self.horizons_min.iter().position(|&x| x == horizon_min)?;
        let q = self.quantiles.iter().position(|&x| x == quantile)?;
        let nq = self.quantiles.len();
        let nh = self.horizons_min.len();
        Some(self.values_mw[(Self::target_index(target) * nh + h) * nq + q])
    }

    pub fn is_monotone(&self) -> bool {
        self.values_mw
            .chunks(self.quantiles.len())
            .all(|c| c.windows(2).all(|w| w[0] <= w[1]))
    }

    /// CSV rows `issued_at,target,horizon_min,quantile,value_mw`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("issued_at,target,horizon_min,quantile,value_mw\n");
        for &target in &TARGETS {
            for &h in &self.horizons_min {
                for &q in &self.quantiles {
                    let v = self.value(target, h, q).unwrap();
                    out.push_str(&format!("{},{},{},{},{}\n", self.issued_at, target, h, q, v));
                }
            }
        }
        out
    }
}

/// Every quantile at every horizon equals the last observed value.
pub fn persistence_forecast(
    history: &[DatasetBin],
    spec: &ForecastSpec,
) -> Result<QuantileForecast, ForecastError> {
    spec.validate()?;
    let last = history.last().ok_or(ForecastError::EmptyHistory)?;
    let nq = spec.quantiles.len();
    let nh = spec.horizons_min.len();
    let mut raw = Vec::with_capacity(2 * nh * nq);
    for &target in &TARGETS {
        let v = match target {
            Target::Renewable => last.renewable_mw,
            Target::NetDemand => last.net_demand_mw,
        };
        raw.extend(std::iter::repeat_n(v, nh * nq));
    }
    Ok(QuantileForecast::from_raw(last.timestamp, spec, &raw))
}

/// Gradient-descent hyperparameters; the 0.70/0.10/0.20 chronological split
/// is fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-2, epochs: 200, batch_size: 32, hidden_size: 16, seed: 42 }
    }
}

pub const TRAIN_FRACTION: f64 = 0.70;
pub const VAL_FRACTION: f64 = 0.10;

/// One recurrent tanh layer plus a linear head over the final hidden state.
///
/// Parameters live in one flat vector laid out as
/// `[w_in (H x F), w_rec (H x H), b_h (H), w_out (O x H), b_out (O)]`, which
/// keeps finite-difference checks and serialization trivial.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecurrentQuantileModel {
    pub format_version: u32,
    pub spec: ForecastSpec,
    pub hidden_size: usize,
    pub has_exog: bool,
    pub seed: u64,
    /// Bin width the model was trained at, seconds.
    pub resolution: u64,
    pub norm_renewable: Standardization,
    pub norm_net: Standardization,
    pub norm_exog: Option<Standardization>,
    params: Vec<f64>,
}

/// Feature layout per bin: standardized renewable, standardized net demand,
/// hour sin/cos, scaled day-of-week, scaled month, weekend flag, and the
/// standardized exogenous covariate when present.
const BASE_FEATURES: usize = 7;

impl RecurrentQuantileModel {
    fn feature_width(&self) -> usize {
        BASE_FEATURES + usize::from(self.has_exog)
    }

    fn output_width(&self) -> usize {
        2 * self.spec.horizons_min.len() * self.spec.quantiles.len()
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_size;
        let f = self.feature_width();
        let o = self.output_width();
        h * f + h * h + h + o * h + o
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Fresh model with identity normalization and seeded uniform init
    /// scaled by 1/sqrt(hidden).
    pub fn new_untrained(
        spec: ForecastSpec,
        hidden_size: usize,
        has_exog: bool,
        resolution: u64,
        seed: u64,
    ) -> Result<Self, ForecastError> {
        spec.validate()?;
        if hidden_size == 0 {
            return Err(ForecastError::BadSpec("hidden size must be positive".into()));
        }
        let mut model = Self {
            format_version: MODEL_FORMAT_VERSION,
            spec,
            hidden_size,
            has_exog,
            seed,
            resolution,
            norm_renewable: Standardization::identity(),
            norm_net: Standardization::identity(),
            norm_exog: has_exog.then(Standardization::identity),
            params: Vec::new(),
        };
        let scale = 1.0 / (hidden_size as f64).sqrt();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        model.params = (0..model.param_count())
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        // Biases start at zero.
        let h = model.hidden_size;
        let f = model.feature_width();
        let o = model.output_width();
        for p in &mut model.params[h * f + h * h..h * f + h * h + h] {
            *p = 0.0;
        }
        let tail = model.params.len() - o;
        for p in &mut model.params[tail..] {
            *p = 0.0;
        }
        Ok(model)
    }

    /// All-zero parameters; with identity normalization the network output is
    /// identically zero.
    pub fn zeroed(
        spec: ForecastSpec,
        hidden_size: usize,
        has_exog: bool,
        resolution: u64,
    ) -> Result<Self, ForecastError> {
        let mut m = Self::new_untrained(spec, hidden_size, has_exog, resolution, 0)?;
        m.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(m)
    }

    fn features(&self, bin: &DatasetBin) -> Vec<f64> {
        let cal = calendar_features(bin.timestamp);
        let mut x = vec![
            self.norm_renewable.apply(bin.renewable_mw),
            self.norm_net.apply(bin.net_demand_mw),
            cal.hour_sin,
            cal.hour_cos,
            cal.day_of_week as f64 / 6.0,
            (cal.month - 1) as f64 / 11.0,
            if cal.is_weekend { 1.0 } else { 0.0 },
        ];
        if let Some(norm) = &self.norm_exog {
            x.push(norm.apply(bin.exog.unwrap_or(0.0)));
        }
        x
    }

    fn tensor_offsets(&self) -> (usize, usize, usize, usize) {
        let h = self.hidden_size;
        let f = self.feature_width();
        let o = self.output_width();
        let w_rec = h * f;
        let b_h = w_rec + h * h;
        let w_out = b_h + h;
        let b_out = w_out + o * h;
        (w_rec, b_h, w_out, b_out)
    }

    /// Forward pass over a full window; returns the per-step hidden states
    /// (for backprop) and the raw standardized head outputs.
    fn forward(&self, window: &[DatasetBin]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let h = self.hidden_size;
        let f = self.feature_width();
        let o = self.output_width();
        let (off_rec, off_bh, off_out, off_bout) = self.tensor_offsets();
        let w_in = &self.params[..off_rec];
        let w_rec = &self.params[off_rec..off_bh];
        let b_h = &self.params[off_bh..off_out];
        let w_out = &self.params[off_out..off_bout];
        let b_out = &self.params[off_bout..];

        let mut hiddens: Vec<Vec<f64>> = Vec::with_capacity(window.len() + 1);
        hiddens.push(vec![0.0; h]);
        for bin in window {
            let x = self.features(bin);
            let prev = hiddens.last().unwrap().clone();
            let mut next = vec![0.0; h];
            for (i, slot) in next.iter_mut().enumerate() {
                let mut a = b_h[i];
                for (j, &xj) in x.iter().enumerate().take(f) {
                    a += w_in[i * f + j] * xj;
                }
                for (j, &pj) in prev.iter().enumerate() {
                    a += w_rec[i * h + j] * pj;
                }
                *slot = a.tanh();
            }
            hiddens.push(next);
        }
        let last = hiddens.last().unwrap();
        let mut y = vec![0.0; o];
        for (k, slot) in y.iter_mut().enumerate() {
            let mut a = b_out[k];
            for (j, &hj) in last.iter().enumerate() {
                a += w_out[k * h + j] * hj;
            }
            *slot = a;
        }
        (hiddens, y)
    }

    /// Quantile level of flat output index k (layout `[target][horizon][q]`).
    fn tau_of(&self, k: usize) -> f64 {
        self.spec.quantiles[k % self.spec.quantiles.len()]
    }

    /// Standardized targets for the sample anchored at `anchor`.
    fn targets_std(&self, dataset: &Dataset, anchor: usize) -> Result<Vec<f64>, ForecastError> {
        let bins = dataset.bins();
        let h_bins = self.spec.horizon_bins(dataset.resolution())?;
        let nq = self.spec.quantiles.len();
        let mut out = Vec::with_capacity(self.output_width());
        for &target in &TARGETS {
            for &hb in &h_bins {
                let b = &bins[anchor + hb];
                let z = match target {
                    Target::Renewable => self.norm_renewable.apply(b.renewable_mw),
                    Target::NetDemand => self.norm_net.apply(b.net_demand_mw),
                };
                out.extend(std::iter::repeat_n(z, nq));
            }
        }
        Ok(out)
    }

    fn window_of<'d>(&self, dataset: &'d Dataset, anchor: usize) -> &'d [DatasetBin] {
        &dataset.bins()[anchor + 1 - self.spec.history_window..=anchor]
    }

    /// Total pinball loss (summed over targets, horizons, quantiles) of the
    /// sample anchored at index `anchor` in the dataset.
    pub fn loss_at(&self, dataset: &Dataset, anchor: usize) -> Result<f64, ForecastError> {
        let (_, y) = self.forward(self.window_of(dataset, anchor));
        let targets = self.targets_std(dataset, anchor)?;
        let mut loss = 0.0;
        for (k, (&yk, &tk)) in y.iter().zip(&targets).enumerate() {
            loss += pinball_loss(tk - yk, self.tau_of(k))?;
        }
        Ok(loss)
    }

    /// Analytic gradient of [`Self::loss_at`] with respect to every
    /// parameter, via backpropagation through time.
    pub fn gradient_at(&self, dataset: &Dataset, anchor: usize) -> Result<Vec<f64>, ForecastError> {
        let window = self.window_of(dataset, anchor);
        let (hiddens, y) = self.forward(window);
        let targets = self.targets_std(dataset, anchor)?;
        let h = self.hidden_size;
        let f = self.feature_width();
        let o = self.output_width();
        let (off_rec, off_bh, off_out, off_bout) = self.tensor_offsets();
        let w_rec = &self.params[off_rec..off_bh];
        let w_out = &self.params[off_out..off_bout];

        let mut grad = vec![0.0; self.params.len()];
        // dL/dy_k = -rho'(e_k), e_k = target - prediction.
        let g_y: Vec<f64> = y
            .iter()
            .zip(&targets)
            .enumerate()
            .map(|(k, (&yk, &tk))| -pinball_grad(tk - yk, self.tau_of(k)))
            .collect();

        let last = hiddens.last().unwrap();
        let mut d_h = vec![0.0; h];
        for k in 0..o {
            grad[off_bout + k] += g_y[k];
            for j in 0..h {
                grad[off_out + k * h + j] += g_y[k] * last[j];
                d_h[j] += w_out[k * h + j] * g_y[k];
            }
        }

        for t in (0..window.len()).rev() {
            let h_t = &hiddens[t + 1];
            let h_prev = &hiddens[t];
            let x = self.features(&window[t]);
            let mut d_prev = vec![0.0; h];
            for i in 0..h {
                let d_a = d_h[i] * (1.0 - h_t[i] * h_t[i]);
                grad[off_bh + i] += d_a;
                for (j, &xj) in x.iter().enumerate().take(f) {
                    grad[i * f + j] += d_a * xj;
                }
                for j in 0..h {
                    grad[off_rec + i * h + j] += d_a * h_prev[j];
                    d_prev[j] += w_rec[i * h + j] * d_a;
                }
            }
            d_h = d_prev;
        }
        Ok(grad)
    }

    /// Compares the analytic gradient against central finite differences
    /// (step 1e-5) over every parameter; returns the maximum relative error
    /// with denominator `max(|g_analytic|, |g_fd|, 1e-8)`.
    pub fn gradient_check(&self, dataset: &Dataset, anchor: usize) -> Result<f64, ForecastError> {
        let analytic = self.gradient_at(dataset, anchor)?;
        let mut probe = self.clone();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for (i, &g) in analytic.iter().enumerate() {
            let orig = probe.params[i];
            probe.params[i] = orig + step;
            let up = probe.loss_at(dataset, anchor)?;
            probe.params[i] = orig - step;
            let down = probe.loss_at(dataset, anchor)?;
            probe.params[i] = orig;
            let fd = (up - down) / (2.0 * step);
            let denom = g.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((g - fd).abs() / denom);
        }
        Ok(worst)
    }

    /// One forward pass over the trailing window ending at `anchor`, raw head
    /// outputs de-standardized and rearranged into monotone quantiles.
    pub fn predict_at(&self, dataset: &Dataset, anchor: usize) -> Result<QuantileForecast, ForecastError> {
        let w = self.spec.history_window;
        if anchor + 1 < w || anchor >= dataset.bins().len() {
            return Err(ForecastError::WrongHistoryLength {
                want: w,
                got: (anchor + 1).min(dataset.bins().len()),
            });
        }
        self.predict(self.window_of(dataset, anchor))
    }

    /// Predicts from an explicit history of exactly `history_window` bins.
    pub fn predict(&self, history: &[DatasetBin]) -> Result<QuantileForecast, ForecastError> {
        if history.len() != self.spec.history_window {
            return Err(ForecastError::WrongHistoryLength {
                want: self.spec.history_window,
                got: history.len(),
            });
        }
        let (_, y) = self.forward(history);
        let nq = self.spec.quantiles.len();
        let nh = self.spec.horizons_min.len();
        let mut mw = Vec::with_capacity(y.len());
        for (t, chunk) in y.chunks(nh * nq).enumerate() {
            let norm = if t == 0 { &self.norm_renewable } else { &self.norm_net };
            mw.extend(chunk.iter().map(|&z| norm.invert(z)));
        }
        Ok(QuantileForecast::from_raw(history.last().unwrap().timestamp, &self.spec, &mw))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ForecastError> {
        let model: Self =
            serde_json::from_str(json).map_err(|e| ForecastError::Malformed(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ForecastError::BadVersion(model.format_version));
        }
        if model.params.len() != model.param_count() {
            return Err(ForecastError::Malformed(format!(
                "expected {} parameters, file has {}",
                model.param_count(),
                model.params.len()
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Empirical quantiles of (actual - P50 forecast) on the validation split.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualQuantiles {
    pub target: Target,
    pub horizon_min: u32,
    /// (tau, residual MW).
    pub quantiles: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub residual_quantiles: Vec<ResidualQuantiles>,
}

/// Chronological sample anchors split 70/10/20: train earliest.
pub struct SampleSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_anchors(
    dataset: &Dataset,
    spec: &ForecastSpec,
) -> Result<SampleSplit, ForecastError> {
    let h_bins = spec.horizon_bins(dataset.resolution())?;
    let max_h = *h_bins.iter().max().unwrap();
    let n = dataset.bins().len();
    let need = spec.history_window + max_h;
    if n < need {
        return Err(ForecastError::DatasetTooShort { need, got: n });
    }
    let anchors: Vec<usize> = (spec.history_window - 1..n - max_h).collect();
    let total = anchors.len();
    let n_train = (total as f64 * TRAIN_FRACTION).floor() as usize;
    let n_val = (total as f64 * VAL_FRACTION).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= total {
        return Err(ForecastError::EmptySplit { got: total });
    }
    Ok(SampleSplit {
        train: anchors[..n_train].to_vec(),
        val: anchors[n_train..n_train + n_val].to_vec(),
        test: anchors[n_train + n_val..].to_vec(),
    })
}

fn mean_loss(model: &RecurrentQuantileModel, dataset: &Dataset, anchors: &[usize]) -> Result<f64, ForecastError> {
    let mut sum = 0.0;
    for &a in anchors {
        sum += model.loss_at(dataset, a)?;
    }
    Ok(sum / anchors.len().max(1) as f64)
}

/// Trains a model on the chronological train split of `dataset` and reports
/// per-epoch train/validation loss. Deterministic for a fixed config.
pub fn train(
    dataset: &Dataset,
    spec: &ForecastSpec,
    config: &TrainConfig,
) -> Result<(RecurrentQuantileModel, TrainReport), ForecastError> {
    spec.validate()?;
    let split = split_anchors(dataset, spec)?;

    let mut model = RecurrentQuantileModel::new_untrained(
        spec.clone(),
        config.hidden_size,
        dataset.has_exog(),
        dataset.resolution(),
        config.seed,
    )?;
    // Normalization constants come from the training span only.
    let train_end_bin = *split.train.last().unwrap();
    let train_bins = &dataset.bins()[..=train_end_bin];
    model.norm_renewable = Standardization::fit(train_bins.iter().map(|b| b.renewable_mw));
    model.norm_net = Standardization::fit(train_bins.iter().map(|b| b.net_demand_mw));
    if dataset.has_exog() {
        model.norm_exog = Some(Standardization::fit(train_bins.iter().map(|b| b.exog.unwrap())));
    }

    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        for batch in split.train.chunks(config.batch_size.max(1)) {
            let mut grad = vec![0.0; model.param_count()];
            for &anchor in batch {
                let g = model.gradient_at(dataset, anchor)?;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            let scale = config.learning_rate / batch.len() as f64;
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= scale * g;
            }
        }
        let train_loss = mean_loss(&model, dataset, &split.train)?;
        let val_loss = mean_loss(&model, dataset, &split.val)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(ForecastError::Diverged { epoch });
        }
        epochs.push(EpochStats { epoch, train_loss, val_loss });
    }

    let residual_quantiles = residual_quantiles(&model, dataset, &split.val)?;
    let report = TrainReport {
        epochs,
        train_samples: split.train.len(),
        val_samples: split.val.len(),
        test_samples: split.test.len(),
        residual_quantiles,
    };
    Ok((model, report))
}

/// Quantiles of (actual - P50 forecast) per target and horizon over the given
/// anchors; the spec's quantile grid is reused for the table rows.
pub fn residual_quantiles(
    model: &RecurrentQuantileModel,
    dataset: &Dataset,
    anchors: &[usize],
) -> Result<Vec<ResidualQuantiles>, ForecastError> {
    let h_bins = model.spec.horizon_bins(dataset.resolution())?;
    let mut rows = Vec::new();
    for &target in &TARGETS {
        for (hi, &h) in model.spec.horizons_min.iter().enumerate() {
            let mut residuals = Vec::with_capacity(anchors.len());
            for &a in anchors {
                let forecast = model.predict_at(dataset, a)?;
                let p50 = forecast.value(target, h, 0.5).unwrap();
                let bin = &dataset.bins()[a + h_bins[hi]];
                let actual = match target {
                    Target::Renewable => bin.renewable_mw,
                    Target::NetDemand => bin.net_demand_mw,
                };
                residuals.push(actual - p50);
            }
            residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let quantiles = model
                .spec
                .quantiles
                .iter()
                .map(|&tau| {
                    let idx = ((residuals.len() as f64 - 1.0) * tau).round() as usize;
                    (tau, residuals.get(idx).copied().unwrap_or(0.0))
                })
                .collect();
            rows.push(ResidualQuantiles { target, horizon_min: h, quantiles });
        }
    }
    Ok(rows)
}

/// Mean P50 pinball loss (MW units) of the model and of the persistence
/// baseline on the test split; lower is better.
pub fn evaluate_test_p50(
    model: &RecurrentQuantileModel,
    dataset: &Dataset,
    spec: &ForecastSpec,
) -> Result<(f64, f64), ForecastError> {
    let split = split_anchors(dataset, spec)?;
    let h_bins = spec.horizon_bins(dataset.resolution())?;
    let mut model_sum = 0.0;
    let mut persist_sum = 0.0;
    let mut count = 0usize;
    for &a in &split.test {
        let window = &dataset.bins()[a + 1 - spec.history_window..=a];
        let mf = model.predict(window)?;
        let pf = persistence_forecast(window, spec)?;
        for &target in &TARGETS {
            for (hi, &h) in spec.horizons_min.iter().enumerate() {
                let bin = &dataset.bins()[a + h_bins[hi]];
                let actual = match target {
                    Target::Renewable => bin.renewable_mw,
                    Target::NetDemand => bin.net_demand_mw,
                };
                model_sum += pinball_loss(actual - mf.value(target, h, 0.5).unwrap(), 0.5)?;
                persist_sum += pinball_loss(actual - pf.value(target, h, 0.5).unwrap(), 0.5)?;
                count += 1;
            }
        }
    }
    Ok((model_sum / count as f64, persist_sum / count as f64))
}
