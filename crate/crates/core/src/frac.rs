//! Fractional flash-cell codec and its capacity/endurance/error-rate models.
//!
//! A conventional cell uses a power-of-two number of threshold-voltage states;
//! a fractional cell uses `m` states with `m` anywhere in `[2, 8]`. Grouping
//! `alpha` such cells stores `floor(log2(m^alpha))` bits, so utilization can be
//! pushed close to 1 by choosing the group size well. All capacity math here is
//! exact integer/rational arithmetic; floating point only enters for the
//! endurance and error-rate models, which are continuous fits.

use serde::Serialize;
use thiserror::Error;

pub const MIN_STATES: u8 = 2;
pub const MAX_STATES: u8 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum FracError {
    #[error("states per cell must be in [{MIN_STATES},{MAX_STATES}], got {0}")]
    BadStateCount(u8),
    #[error("cells per group must be >= 1")]
    ZeroAlpha,
    #[error("m^alpha overflows the supported range (m={m}, alpha={alpha})")]
    Range { m: u8, alpha: u32 },
    #[error("value {value} does not fit in {bits} bits")]
    ValueOutOfRange { value: u128, bits: u32 },
    #[error("digit {digit} is not a base-{m} digit")]
    BadDigit { digit: u8, m: u8 },
    #[error("group has {got} digits, spec wants {want}")]
    GroupLength { got: usize, want: usize },
    #[error("group encodes {value}, outside the canonical range [0, 2^{bits})")]
    NonCanonicalGroup { value: u128, bits: u32 },
    #[error("state index {state} is not a valid state for this ladder")]
    BadState { state: u8 },
    #[error("read ladder references must be strictly ascending")]
    BadLadder,
    #[error("target state {0} out of programmable range")]
    BadTargetState(u8),
}

fn check_m(m: u8) -> Result<(), FracError> {
    if !(MIN_STATES..=MAX_STATES).contains(&m) {
        return Err(FracError::BadStateCount(m));
    }
    Ok(())
}

/// m^alpha as an exact u128, or a range error on overflow.
fn states_per_group(m: u8, alpha: u32) -> Result<u128, FracError> {
    (m as u128)
        .checked_pow(alpha)
        .ok_or(FracError::Range { m, alpha })
}

/// Largest k with 2^k <= m^alpha, by exact integer comparison.
pub fn bits_per_group(m: u8, alpha: u32) -> Result<u32, FracError> {
    check_m(m)?;
    if alpha == 0 {
        return Err(FracError::ZeroAlpha);
    }
    let total = states_per_group(m, alpha)?;
    // total >= 2, so ilog2 is well-defined and 2^k <= total < 2^(k+1).
    Ok(total.ilog2())
}

/// Exact cell utilization 2^k / m^alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Utilization {
    /// 2^k: state combinations that encode data.
    pub used: u128,
    /// m^alpha: all state combinations of the group.
    pub total: u128,
}

impl Utilization {
    pub fn as_f64(&self) -> f64 {
        self.used as f64 / self.total as f64
    }

    /// Exact comparison by cross-multiplication.
    ///
    /// Panics on overflow; callers stay within the range `bits_per_group`
    /// accepts, where both cross products fit in u128 for alpha <= 20.
    pub fn cmp_exact(&self, other: &Utilization) -> std::cmp::Ordering {
        let lhs = self.used.checked_mul(other.total).expect("utilization cmp overflow");
        let rhs = other.used.checked_mul(self.total).expect("utilization cmp overflow");
        lhs.cmp(&rhs)
    }
}

pub fn utilization(m: u8, alpha: u32) -> Result<Utilization, FracError> {
    let k = bits_per_group(m, alpha)?;
    Ok(Utilization {
        used: 1u128 << k,
        total: states_per_group(m, alpha)?,
    })
}

/// Group size in [1, alpha_max] with the highest utilization, ties toward the
/// smallest group.
pub fn best_alpha(m: u8, alpha_max: u32) -> Result<u32, FracError> {
    check_m(m)?;
    if alpha_max == 0 {
        return Err(FracError::ZeroAlpha);
    }
    let mut best = 1u32;
    let mut best_util = utilization(m, 1)?;
    for alpha in 2..=alpha_max {
        let util = utilization(m, alpha)?;
        if util.cmp_exact(&best_util) == std::cmp::Ordering::Greater {
            best = alpha;
            best_util = util;
        }
    }
    Ok(best)
}

/// A validated (m, alpha) encoding configuration with its derived bit width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FracSpec {
    m: u8,
    alpha: u32,
    bits: u32,
}

impl FracSpec {
    pub fn new(m: u8, alpha: u32) -> Result<Self, FracError> {
        let bits = bits_per_group(m, alpha)?;
        Ok(Self { m, alpha, bits })
    }

    pub fn states(&self) -> u8 {
        self.m
    }

    pub fn cells_per_group(&self) -> u32 {
        self.alpha
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn utilization(&self) -> Utilization {
        utilization(self.m, self.alpha).expect("spec already validated")
    }
}

/// The programmed states of one cell group, most-significant digit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellGroup {
    pub digits: Vec<u8>,
}

/// Canonical base-m expansion of `value`, most-significant digit first.
pub fn encode(value: u128, spec: &FracSpec) -> Result<CellGroup, FracError> {
    if spec.bits < 128 && value >= (1u128 << spec.bits) {
        return Err(FracError::ValueOutOfRange { value, bits: spec.bits });
    }
    let m = spec.m as u128;
    let mut digits = vec![0u8; spec.alpha as usize];
    let mut rest = value;
    for slot in digits.iter_mut().rev() {
        *slot = (rest % m) as u8;
        rest /= m;
    }
    debug_assert_eq!(rest, 0);
    Ok(CellGroup { digits })
}

/// Exact inverse of [`encode`]; rejects digit patterns outside the canonical
/// value range (the unused state combinations).
pub fn decode(group: &CellGroup, spec: &FracSpec) -> Result<u128, FracError> {
    if group.digits.len() != spec.alpha as usize {
        return Err(FracError::GroupLength {
            got: group.digits.len(),
            want: spec.alpha as usize,
        });
    }
    let m = spec.m as u128;
    let mut value = 0u128;
    for &digit in &group.digits {
        if digit >= spec.m {
            return Err(FracError::BadDigit { digit, m: spec.m });
        }
        value = value * m + digit as u128;
    }
    if spec.bits < 128 && value >= (1u128 << spec.bits) {
        return Err(FracError::NonCanonicalGroup { value, bits: spec.bits });
    }
    Ok(value)
}

/// Iterations needed to sense an m-state cell: ceil(log2 m), by integers.
pub fn read_iterations(m: u8) -> Result<u32, FracError> {
    check_m(m)?;
    let floor = (m as u32).ilog2();
    Ok(if m.is_power_of_two() { floor } else { floor + 1 })
}

/// Ascending read references r_1..r_{m-1}; reference r_j separates state j-1
/// from state j.
#[derive(Debug, Clone)]
pub struct ReadLadder {
    refs: Vec<f64>,
}

impl ReadLadder {
    pub fn new(refs: Vec<f64>) -> Result<Self, FracError> {
        if refs.is_empty() || refs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FracError::BadLadder);
        }
        Ok(Self { refs })
    }

    /// Evenly spaced references for an m-state cell over the unit window.
    pub fn uniform(m: u8) -> Result<Self, FracError> {
        check_m(m)?;
        let n = (m - 1) as usize;
        Self::new((1..=n).map(|j| j as f64 / m as f64).collect())
    }

    pub fn states(&self) -> u8 {
        self.refs.len() as u8 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadOutcome {
    pub state: u8,
    /// 1-based indices of the references compared against, in order.
    pub references_visited: Vec<u8>,
}

/// Iterative sensing of one cell: binary search over the m-1 references,
/// starting from the middle one (upper median for an even reference count).
pub fn read_cell(state: u8, ladder: &ReadLadder) -> Result<ReadOutcome, FracError> {
    let m = ladder.states();
    if state >= m {
        return Err(FracError::BadState { state });
    }
    let mut lo = 0u8;
    let mut hi = m - 1;
    let mut visited = Vec::new();
    while lo < hi {
        // Reference r_j splits the candidates into [lo, j-1] and [j, hi].
        let j = (lo + hi).div_ceil(2);
        visited.push(j);
        if state >= j {
            lo = j;
        } else {
            hi = j - 1;
        }
    }
    Ok(ReadOutcome { state: lo, references_visited: visited })
}

/// Incremental-step-pulse programming ladder. States sit at
/// `state * window_v / (m-1)` and the first pulse for an m-state cell starts
/// at `start_fraction` of one state spacing, so coarser cells (smaller m)
/// start higher and need fewer pulses.
#[derive(Debug, Clone, Copy)]
pub struct IsppConfig {
    pub window_v: f64,
    pub delta_v: f64,
    pub start_fraction: f64,
}

impl Default for IsppConfig {
    fn default() -> Self {
        Self { window_v: 7.0, delta_v: 0.25, start_fraction: 0.5 }
    }
}

impl IsppConfig {
    pub fn start_voltage(&self, m: u8) -> f64 {
        self.start_fraction * self.window_v / (m - 1) as f64
    }

    pub fn target_voltage(&self, m: u8, state: u8) -> f64 {
        state as f64 * self.window_v / (m - 1) as f64
    }
}

/// Pulses to program a cell to `target_state`; the erased state 0 needs none.
pub fn program_pulses(m: u8, target_state: u8, ispp: &IsppConfig) -> Result<u32, FracError> {
    check_m(m)?;
    if target_state >= m {
        return Err(FracError::BadTargetState(target_state));
    }
    if target_state == 0 {
        return Ok(0);
    }
    let span = ispp.target_voltage(m, target_state) - ispp.start_voltage(m);
    Ok(((span / ispp.delta_v).ceil() as u32).max(1))
}

/// Endurance gain of an m-state cell relative to the 8-state baseline,
/// log-linear in ln(m) between the anchors factor(8)=1 and factor(2)=10.
pub fn endurance_multiplier(m: u8) -> Result<f64, FracError> {
    check_m(m)?;
    let ln2 = 2f64.ln();
    let ln8 = 8f64.ln();
    let exponent = (ln8 - (m as f64).ln()) / (ln8 - ln2);
    Ok(10f64.powf(exponent))
}

/// Cell count of one page; the default makes an 8-state, alpha=1 page hold
/// exactly 4096 bytes.
#[derive(Debug, Clone, Copy)]
pub struct PageGeometry {
    pub cells_per_page: u32,
}

impl Default for PageGeometry {
    fn default() -> Self {
        Self { cells_per_page: 10923 }
    }
}

/// Whole bytes a page stores under (m, alpha): floor(cells/alpha) groups of k
/// bits each, floored to bytes.
pub fn page_capacity_bytes(m: u8, alpha: u32, geometry: &PageGeometry) -> Result<u64, FracError> {
    let k = bits_per_group(m, alpha)?;
    let groups = (geometry.cells_per_page / alpha) as u64;
    Ok(groups * k as u64 / 8)
}

/// Raw bit error rate model `rber(m, n) = a(m) * n^b`, with per-m coefficients
/// calibrated so the anchor cycle count reproduces the measured anchors
/// exactly. States above the calibrated set extrapolate log-linearly in m.
#[derive(Debug, Clone)]
pub struct RberModel {
    /// (m, rber at `anchor_cycles`), ascending in m.
    pub anchors: Vec<(u8, f64)>,
    pub anchor_cycles: f64,
    pub exponent: f64,
}

impl Default for RberModel {
    fn default() -> Self {
        Self {
            anchors: vec![(2, 0.006), (3, 0.009), (4, 0.014)],
            anchor_cycles: 6000.0,
            exponent: 1.0,
        }
    }
}

impl RberModel {
    /// Coefficient a(m) = rber(m, anchor_cycles) / anchor_cycles^b.
    fn coefficient(&self, m: u8) -> Result<f64, FracError> {
        check_m(m)?;
        let scale = self.anchor_cycles.powf(self.exponent);
        if let Some(&(_, r)) = self.anchors.iter().find(|&&(am, _)| am == m) {
            return Ok(r / scale);
        }
        // Extrapolate ln a linearly in m from the top two anchors.
        let n = self.anchors.len();
        let (m1, r1) = self.anchors[n - 2];
        let (m2, r2) = self.anchors[n - 1];
        let slope = (r2.ln() - r1.ln()) / (m2 - m1) as f64;
        let ln_r = r2.ln() + slope * (m - m2) as f64;
        Ok(ln_r.exp() / scale)
    }

    pub fn rber(&self, m: u8, n_pe: f64) -> Result<f64, FracError> {
        let a = self.coefficient(m)?;
        Ok(a * n_pe.max(0.0).powf(self.exponent))
    }
}

/// One row of the exploration table emitted by the `frac table` command.
#[derive(Debug, Clone, Serialize)]
pub struct FracTableRow {
    pub m: u8,
    pub alpha: u32,
    pub bits: u32,
    pub utilization: f64,
    pub capacity_bytes: u64,
    pub endurance_multiplier: f64,
}

pub fn frac_table(m: u8, alpha_max: u32, geometry: &PageGeometry) -> Result<Vec<FracTableRow>, FracError> {
    check_m(m)?;
    if alpha_max == 0 {
        return Err(FracError::ZeroAlpha);
    }
    let endurance = endurance_multiplier(m)?;
    (1..=alpha_max)
        .map(|alpha| {
            Ok(FracTableRow {
                m,
                alpha,
                bits: bits_per_group(m, alpha)?,
                utilization: utilization(m, alpha)?.as_f64(),
                capacity_bytes: page_capacity_bytes(m, alpha, geometry)?,
                endurance_multiplier: endurance,
            })
        })
        .collect()
}
