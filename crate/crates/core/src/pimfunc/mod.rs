//! Functional (bit-accurate, device-free) models of crossbar compute
//! primitives.
//!
//! Everything here is defined purely over integers and booleans so the
//! models can be checked against machine arithmetic: cyclic shifts as
//! permutation matrix-vector products, search-based bit-serial addition,
//! shift-add multiplication, conductance-sum crossbar logic, a
//! threshold-ladder ADC with thermometer output, a debiased random bit
//! source, and a negacyclic NTT reference kernel.

mod ntt;
mod workloads;

pub use ntt::{NttError, NttParams};
pub use workloads::{workload_descriptor, WorkloadDescriptor, WorkloadError};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PimError {
    #[error("width {0} outside 1..=64")]
    BadWidth(u32),
    #[error("value {value} does not fit in {width} bits")]
    ValueTooWide { value: u64, width: u32 },
    #[error("shift {shift} out of range for dimension {n}")]
    BadShift { shift: usize, n: usize },
    #[error("row assignments are not a permutation")]
    NotAPermutation,
    #[error("vector length {got} does not match dimension {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("operand widths {0} and {1} must match")]
    WidthMismatch(u32, u32),
    #[error("operand width {width} exceeds the {limit}-bit limit for this engine")]
    WidthLimit { width: u32, limit: u32 },
    #[error("ADC thresholds must be strictly ascending with at least one enabled")]
    BadAdcConfig,
    #[error("input voltage must be non-negative")]
    NegativeVoltage,
}

/// An unsigned integer constrained to an explicit bit width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Word {
    value: u64,
    width: u32,
}

impl Word {
    pub fn new(value: u64, width: u32) -> Result<Self, PimError> {
        if !(1..=64).contains(&width) {
            return Err(PimError::BadWidth(width));
        }
        if width < 64 && value >= 1u64 << width {
            return Err(PimError::ValueTooWide { value, width });
        }
        Ok(Self { value, width })
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    fn bit(&self, i: u32) -> bool {
        i < 64 && (self.value >> i) & 1 == 1
    }
}

/// A square 0/1 matrix with exactly one 1 per row and column, stored as the
/// column index of each row's 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMatrix {
    n: usize,
    rows: Vec<usize>,
}

impl PermutationMatrix {
    pub fn new(rows: Vec<usize>) -> Result<Self, PimError> {
        let n = rows.len();
        let mut seen = vec![false; n];
        for &c in &rows {
            if c >= n || seen[c] {
                return Err(PimError::NotAPermutation);
            }
            seen[c] = true;
        }
        Ok(Self { n, rows })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Matrix product self * other: apply `other` first, then `self`.
    pub fn compose(&self, other: &PermutationMatrix) -> Result<PermutationMatrix, PimError> {
        if self.n != other.n {
            return Err(PimError::LengthMismatch { got: other.n, want: self.n });
        }
        Ok(PermutationMatrix {
            n: self.n,
            rows: self.rows.iter().map(|&r| other.rows[r]).collect(),
        })
    }

    /// Dense 0/1 form, for oracle comparisons.
    pub fn to_dense(&self) -> Vec<Vec<u64>> {
        let mut m = vec![vec![0u64; self.n]; self.n];
        for (i, &c) in self.rows.iter().enumerate() {
            m[i][c] = 1;
        }
        m
    }
}

/// The matrix that rotates a vector right by `s`: `y[i] = x[(i - s) mod n]`.
pub fn shift_matrix(n: usize, s: usize) -> Result<PermutationMatrix, PimError> {
    if n == 0 || s >= n {
        return Err(PimError::BadShift { shift: s, n });
    }
    PermutationMatrix::new((0..n).map(|i| (i + n - s) % n).collect())
}

/// Exact permutation application; agrees with the dense matrix-vector
/// product by construction.
pub fn apply_perm<T: Clone>(matrix: &PermutationMatrix, vector: &[T]) -> Result<Vec<T>, PimError> {
    if vector.len() != matrix.n {
        return Err(PimError::LengthMismatch { got: vector.len(), want: matrix.n });
    }
    Ok(matrix.rows.iter().map(|&c| vector[c].clone()).collect())
}

/// Multi-bit addition as a cascade of bitwise search operations: an explicit
/// bit-serial carry chain. The result is one bit wider than the wider input.
pub fn associative_add(a: Word, b: Word) -> Result<Word, PimError> {
    let limit = 63;
    for w in [a.width, b.width] {
        if w > limit {
            return Err(PimError::WidthLimit { width: w, limit });
        }
    }
    let out_width = a.width.max(b.width) + 1;
    let mut value = 0u64;
    let mut carry = false;
    for i in 0..out_width {
        let (x, y) = (a.bit(i), b.bit(i));
        // One search step: sum bit and carry-out from the matched pattern.
        let sum = x ^ y ^ carry;
        carry = (x & y) | (carry & (x ^ y));
        if sum {
            value |= 1 << i;
        }
    }
    debug_assert_eq!(value, a.value + b.value);
    Word::new(value, out_width)
}

/// N-bit multiply from shift-add of partial products: shifts go through
/// [`shift_matrix`] on the bit vector, partial-product sums through the
/// bit-serial carry chain.
pub fn mul(a: Word, b: Word) -> Result<Word, PimError> {
    let limit = 32;
    for w in [a.width, b.width] {
        if w > limit {
            return Err(PimError::WidthLimit { width: w, limit });
        }
    }
    let n = (a.width + b.width) as usize;
    let a_bits: Vec<u8> = (0..n as u32).map(|i| u8::from(a.bit(i))).collect();
    let mut acc = vec![0u8; n];
    for i in 0..b.width as usize {
        if !b.bit(i as u32) {
            continue;
        }
        // Multiply by 2^i: rotate the bit vector right by i. The operand
        // occupies the low a.width bits, so nothing wraps around.
        let shifted = apply_perm(&shift_matrix(n, i)?, &a_bits)?;
        acc = ripple_add_bits(&acc, &shifted);
    }
    let value = acc
        .iter()
        .enumerate()
        .fold(0u64, |v, (i, &bit)| v | ((bit as u64) << i));
    debug_assert_eq!(value, a.value * b.value);
    Word::new(value, a.width + b.width)
}

/// Fixed-width bit-serial add; the final carry is provably zero for the
/// product accumulation above.
fn ripple_add_bits(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; a.len()];
    let mut carry = 0u8;
    for (i, slot) in out.iter_mut().enumerate() {
        let s = a[i] + b[i] + carry;
        *slot = s & 1;
        carry = s >> 1;
    }
    debug_assert_eq!(carry, 0);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogicKind {
    And,
    Xor,
}

/// In-array logic via per-bit conductance sums: with both operand bits
/// mapped to cells, the bitline sum s is 0, 1, or 2; AND fires on s = 2,
/// XOR on s = 1.
pub fn logic_op(kind: LogicKind, x: Word, y: Word) -> Result<Word, PimError> {
    if x.width != y.width {
        return Err(PimError::WidthMismatch(x.width, y.width));
    }
    let mut value = 0u64;
    for i in 0..x.width {
        let s = u8::from(x.bit(i)) + u8::from(y.bit(i));
        let bit = match kind {
            LogicKind::And => s == 2,
            LogicKind::Xor => s == 1,
        };
        if bit {
            value |= 1 << i;
        }
    }
    Word::new(value, x.width)
}

/// Threshold ladder of the tunable-precision ADC. Disabling devices halves
/// the precision without touching the remaining thresholds.
#[derive(Debug, Clone)]
pub struct AdcConfig {
    thresholds_v: Vec<f64>,
    enabled: Vec<bool>,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            thresholds_v: vec![0.4, 0.8, 1.2, 1.6],
            enabled: vec![true; 4],
        }
    }
}

impl AdcConfig {
    pub fn new(thresholds_v: Vec<f64>, enabled: Vec<bool>) -> Result<Self, PimError> {
        if thresholds_v.is_empty()
            || thresholds_v.len() != enabled.len()
            || thresholds_v.windows(2).any(|w| w[0] >= w[1])
            || !enabled.iter().any(|&e| e)
        {
            return Err(PimError::BadAdcConfig);
        }
        Ok(Self { thresholds_v, enabled })
    }

    /// Disables the devices at the given zero-based positions.
    pub fn with_disabled(mut self, positions: &[usize]) -> Result<Self, PimError> {
        for &p in positions {
            if p >= self.enabled.len() {
                return Err(PimError::BadAdcConfig);
            }
            self.enabled[p] = false;
        }
        if !self.enabled.iter().any(|&e| e) {
            return Err(PimError::BadAdcConfig);
        }
        Ok(self)
    }
}

/// Thermometer code of an input voltage: one character per enabled device in
/// ascending threshold order, '1' while the input exceeds the threshold.
pub fn adc_quantize(v: f64, config: &AdcConfig) -> Result<String, PimError> {
    if v < 0.0 {
        return Err(PimError::NegativeVoltage);
    }
    Ok(config
        .thresholds_v
        .iter()
        .zip(&config.enabled)
        .filter(|&(_, &e)| e)
        .map(|(&t, _)| if v > t { '1' } else { '0' })
        .collect())
}

/// Debiasing controller state of the random bit source: a write-voltage
/// bias expressed as a probability of emitting 1, adjusted after each
/// segment from the ones count of an 8-bit counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrgState {
    pub bias: f64,
    pub gain: f64,
}

pub const TRG_SEGMENT_BITS: usize = 256;
pub const TRG_COUNTER_MAX: u32 = 255;

pub const TRG_BIAS_MIN: f64 = 0.01;
pub const TRG_BIAS_MAX: f64 = 0.99;

impl TrgState {
    pub fn new(bias: f64, gain: f64) -> Self {
        Self { bias: bias.clamp(TRG_BIAS_MIN, TRG_BIAS_MAX), gain }
    }
}

#[derive(Debug, Clone)]
pub struct TrgSegment {
    pub bits: Vec<bool>,
    /// Exact ones count; drives the controller.
    pub ones: u32,
    /// The 8-bit counter readout, saturating at 255.
    pub counter: u8,
}

/// Emits one 256-bit segment of Bernoulli(bias) bits and returns the updated
/// controller state: bias moves against the observed ones excess.
pub fn trg_next_segment<R: Rng>(state: TrgState, rng: &mut R) -> (TrgSegment, TrgState) {
    let bits: Vec<bool> = (0..TRG_SEGMENT_BITS).map(|_| rng.gen::<f64>() < state.bias).collect();
    let ones = bits.iter().filter(|&&b| b).count() as u32;
    let counter = ones.min(TRG_COUNTER_MAX) as u8;
    let excess = ones as f64 / TRG_SEGMENT_BITS as f64 - 0.5;
    let next = TrgState::new(state.bias - state.gain * excess, state.gain);
    (TrgSegment { bits, ones, counter }, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn word(value: u64, width: u32) -> Word {
        Word::new(value, width).unwrap()
    }

    /// Dense matrix-vector product over the 0/1 matrix, the oracle for
    /// permutation application.
    fn dense_apply(matrix: &PermutationMatrix, x: &[u64]) -> Vec<u64> {
        matrix
            .to_dense()
            .iter()
            .map(|row| row.iter().zip(x).map(|(&m, &v)| m * v).sum())
            .collect()
    }

    #[test]
    fn shift_matrix_identity_and_rotation() {
        let id = shift_matrix(4, 0).unwrap();
        assert_eq!(apply_perm(&id, &[10u64, 20, 30, 40]).unwrap(), vec![10, 20, 30, 40]);
        let rot = shift_matrix(4, 1).unwrap();
        assert_eq!(apply_perm(&rot, &['a', 'b', 'c', 'd']).unwrap(), vec!['d', 'a', 'b', 'c']);
        assert!(matches!(shift_matrix(4, 4), Err(PimError::BadShift { .. })));
    }

    #[test]
    fn shift_matrix_agrees_with_dense_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for n in [4usize, 8, 16] {
            for s in 0..n {
                let m = shift_matrix(n, s).unwrap();
                let x: Vec<u64> = (0..n).map(|_| rng.gen_range(0..12289)).collect();
                assert_eq!(apply_perm(&m, &x).unwrap(), dense_apply(&m, &x));
            }
        }
    }

    #[test]
    fn shift_composition_is_additive() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for n in [4usize, 8, 16] {
            for s in 0..n {
                for t in 0..n {
                    let a = shift_matrix(n, s).unwrap();
                    let b = shift_matrix(n, t).unwrap();
                    let c = shift_matrix(n, (s + t) % n).unwrap();
                    let x: Vec<u64> = (0..n).map(|_| rng.gen_range(0..1000)).collect();
                    let via_two = apply_perm(&a, &apply_perm(&b, &x).unwrap()).unwrap();
                    assert_eq!(via_two, apply_perm(&c, &x).unwrap(), "n={n} s={s} t={t}");
                    assert_eq!(a.compose(&b).unwrap(), c);
                }
            }
        }
    }

    #[test]
    fn rotation_by_n_is_identity() {
        let m = shift_matrix(8, 3).unwrap();
        let inv = shift_matrix(8, 5).unwrap();
        assert_eq!(m.compose(&inv).unwrap(), shift_matrix(8, 0).unwrap());
    }

    #[test]
    fn associative_add_basics() {
        assert_eq!(associative_add(word(3, 4), word(5, 4)).unwrap(), word(8, 5));
        assert_eq!(associative_add(word(0, 1), word(13, 4)).unwrap(), word(13, 5));
        assert!(matches!(associative_add(word(0, 64), word(1, 2)), Err(PimError::WidthLimit { .. })));
    }

    #[test]
    fn associative_add_random_against_integers() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a: u64 = rng.gen_range(0..1u64 << 32);
            let b: u64 = rng.gen_range(0..1u64 << 32);
            let sum = associative_add(word(a, 33), word(b, 33)).unwrap();
            assert_eq!(sum.value(), a + b);
        }
    }

    #[test]
    fn mul_basics() {
        assert_eq!(mul(word(0, 4), word(9, 4)).unwrap().value(), 0);
        assert_eq!(mul(word(7, 4), word(6, 4)).unwrap(), word(42, 8));
        assert!(matches!(mul(word(0, 33), word(1, 2)), Err(PimError::WidthLimit { .. })));
    }

    #[test]
    fn mul_random_against_integers() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let a: u64 = rng.gen_range(0..1u64 << 16);
            let b: u64 = rng.gen_range(0..1u64 << 16);
            let p = mul(word(a, 16), word(b, 16)).unwrap();
            assert_eq!(p.value(), a * b);
            assert_eq!(p.width(), 32);
        }
    }

    #[test]
    fn logic_op_truth_tables() {
        assert_eq!(logic_op(LogicKind::And, word(0b1100, 4), word(0b1010, 4)).unwrap().value(), 0b1000);
        let x = word(0b1011, 4);
        assert_eq!(logic_op(LogicKind::Xor, x, x).unwrap().value(), 0);
        assert!(matches!(
            logic_op(LogicKind::And, word(1, 2), word(1, 3)),
            Err(PimError::WidthMismatch(2, 3))
        ));
    }

    #[test]
    fn logic_op_exhaustive_4bit() {
        for a in 0..16u64 {
            for b in 0..16u64 {
                let and = logic_op(LogicKind::And, word(a, 4), word(b, 4)).unwrap();
                let xor = logic_op(LogicKind::Xor, word(a, 4), word(b, 4)).unwrap();
                assert_eq!(and.value(), a & b);
                assert_eq!(xor.value(), a ^ b);
            }
        }
    }

    #[test]
    fn adc_anchor_code() {
        let config = AdcConfig::default();
        assert_eq!(adc_quantize(0.9, &config).unwrap(), "1100");
        assert_eq!(adc_quantize(0.0, &config).unwrap(), "0000");
        assert_eq!(adc_quantize(2.0, &config).unwrap(), "1111");
    }

    #[test]
    fn adc_half_precision_by_disabling_devices() {
        // Devices 1 and 3 off leaves the 0.8 V and 1.6 V thresholds.
        let config = AdcConfig::default().with_disabled(&[0, 2]).unwrap();
        assert_eq!(adc_quantize(0.9, &config).unwrap(), "10");
    }

    #[test]
    fn adc_code_is_monotone_in_voltage() {
        let config = AdcConfig::default();
        let mut prev = 0u32;
        for i in 0..200 {
            let v = i as f64 * 0.01;
            let ones = adc_quantize(v, &config)
                .unwrap()
                .chars()
                .filter(|&c| c == '1')
                .count() as u32;
            assert!(ones >= prev, "code lost a 1 at {v}");
            prev = ones;
        }
    }

    #[test]
    fn trg_zero_gain_keeps_bias() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let s0 = TrgState::new(0.5, 0.0);
        let (_, s1) = trg_next_segment(s0, &mut rng);
        assert_eq!(s1.bias, 0.5);
    }

    #[test]
    fn trg_controller_pushes_back() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let s0 = TrgState::new(1.0, 0.5);
        assert_eq!(s0.bias, TRG_BIAS_MAX);
        let (seg, s1) = trg_next_segment(s0, &mut rng);
        assert!(seg.ones > 240, "heavily biased source should emit mostly ones");
        assert!(s1.bias < s0.bias);
        assert_eq!(seg.counter as u32, seg.ones.min(TRG_COUNTER_MAX));
    }

    #[test]
    fn trg_long_run_converges_to_half() {
        // 1e6 bits; the last 1e5 should be balanced to within 1%.
        for bias0 in [0.1, 0.3, 0.7, 0.9] {
            let mut rng = ChaCha20Rng::seed_from_u64(7);
            let mut state = TrgState::new(bias0, 0.5);
            let total_bits = 1_000_000usize;
            let segments = total_bits / TRG_SEGMENT_BITS + 1;
            let mut tail_ones = 0usize;
            let mut tail_bits = 0usize;
            let mut emitted = 0usize;
            for _ in 0..segments {
                let (seg, next) = trg_next_segment(state, &mut rng);
                state = next;
                for &b in &seg.bits {
                    if emitted >= total_bits - 100_000 && emitted < total_bits {
                        tail_bits += 1;
                        tail_ones += usize::from(b);
                    }
                    emitted += 1;
                }
            }
            let fraction = tail_ones as f64 / tail_bits as f64;
            assert!((fraction - 0.5).abs() <= 0.01, "bias0={bias0}: tail fraction {fraction}");
        }
    }
}
