//! Golay complementary codes and BPSK probe frames.
//!
//! A probe frame is one code of a complementary pair, expanded to
//! `samples_per_symbol` samples per chip (rectangular pulses), followed by a
//! zero pad long enough that the echo of the whole fiber has returned before
//! the next frame is launched.

use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

/// Largest supported code order (2^20 chips per sequence).
pub const MAX_GOLAY_ORDER: u32 = 20;

/// Default oversampling of the receiver relative to the symbol rate.
pub const DEFAULT_SAMPLES_PER_SYMBOL: usize = 2;

/// Which sequence of the complementary pair a frame carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Which {
    A,
    B,
}

impl Which {
    pub fn other(self) -> Which {
        match self {
            Which::A => Which::B,
            Which::B => Which::A,
        }
    }
}

/// A pair of ±1 sequences whose aperiodic autocorrelations sum to `2N·δ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GolayPair {
    seq_a: Vec<i8>,
    seq_b: Vec<i8>,
    order: u32,
}

impl GolayPair {
    /// Wraps an externally supplied pair after checking it really is complementary.
    pub fn new(seq_a: Vec<i8>, seq_b: Vec<i8>) -> Result<Self> {
        let n = seq_a.len();
        if n == 0 || !n.is_power_of_two() || seq_b.len() != n {
            return Err(Error::InvalidInput(format!(
                "pair lengths must be equal powers of two, got {} and {}",
                seq_a.len(),
                seq_b.len()
            )));
        }
        if seq_a.iter().chain(&seq_b).any(|&c| c != 1 && c != -1) {
            return Err(Error::InvalidInput("code chips must be ±1".into()));
        }
        let sum = summed_autocorrelation(&seq_a, &seq_b);
        if sum[0] != 2 * n as i64 || sum[1..].iter().any(|&v| v != 0) {
            return Err(Error::InvalidInput("sequences are not complementary".into()));
        }
        Ok(GolayPair {
            seq_a,
            seq_b,
            order: n.trailing_zeros(),
        })
    }

    pub fn seq_a(&self) -> &[i8] {
        &self.seq_a
    }

    pub fn seq_b(&self) -> &[i8] {
        &self.seq_b
    }

    pub fn sequence(&self, which: Which) -> &[i8] {
        match which {
            Which::A => &self.seq_a,
            Which::B => &self.seq_b,
        }
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.seq_a.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Builds the complementary pair of length `2^order` by recursive doubling:
/// `a' = a‖b`, `b' = a‖(−b)`, starting from `([+1], [+1])`.
pub fn golay_pair(order: u32) -> Result<GolayPair> {
    if order > MAX_GOLAY_ORDER {
        return Err(Error::Size(format!(
            "Golay order {order} exceeds the limit of {MAX_GOLAY_ORDER}"
        )));
    }
    let n = 1usize << order;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    a.push(1i8);
    b.push(1i8);
    for _ in 0..order {
        let len = a.len();
        a.extend_from_within(..);
        a[len..].copy_from_slice(&b);
        b.extend_from_within(..);
        b[..len].copy_from_slice(&a[..len]);
        for c in &mut b[len..] {
            *c = -*c;
        }
    }
    Ok(GolayPair {
        seq_a: a,
        seq_b: b,
        order,
    })
}

/// Sum of the aperiodic autocorrelations of two equal-length sequences,
/// for lags `0..N` (the negative lags mirror these).
pub fn summed_autocorrelation(a: &[i8], b: &[i8]) -> Vec<i64> {
    let n = a.len();
    (0..n)
        .map(|lag| {
            let ra: i64 = (0..n - lag).map(|i| a[i] as i64 * a[i + lag] as i64).sum();
            let rb: i64 = (0..n - lag).map(|i| b[i] as i64 * b[i + lag] as i64).sum();
            ra + rb
        })
        .collect()
}

/// One transmit frame: code chips followed by zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFrame {
    symbols: Vec<i8>,
    code_len: usize,
    symbol_rate: f64,
    samples_per_symbol: usize,
    which: Which,
}

impl ProbeFrame {
    /// Chips of the frame in symbol units, code first then zeros.
    pub fn symbols(&self) -> &[i8] {
        &self.symbols
    }

    pub fn which(&self) -> Which {
        self.which
    }

    pub fn symbol_rate(&self) -> f64 {
        self.symbol_rate
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.samples_per_symbol
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.samples_per_symbol as f64
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn zero_pad_symbols(&self) -> usize {
        self.symbols.len() - self.code_len
    }

    pub fn len_samples(&self) -> usize {
        self.symbols.len() * self.samples_per_symbol
    }

    pub fn duration(&self) -> f64 {
        self.symbols.len() as f64 / self.symbol_rate
    }

    /// The transmitted baseband field: each chip held for `samples_per_symbol`
    /// samples. BPSK maps chip +1 to phase 0 and −1 to phase π.
    pub fn samples(&self) -> Vec<f32> {
        self.symbols
            .iter()
            .flat_map(|&c| std::iter::repeat(c as f32).take(self.samples_per_symbol))
            .collect()
    }

    /// The correlation reference: the code part of [`samples`](Self::samples).
    pub fn reference(&self) -> Vec<f32> {
        let mut s = self.samples();
        s.truncate(self.code_len * self.samples_per_symbol);
        s
    }
}

/// Expands one sequence of `pair` into a frame with `zero_pad_symbols` trailing zeros.
pub fn build_frame(
    pair: &GolayPair,
    which: Which,
    samples_per_symbol: usize,
    zero_pad_symbols: usize,
    symbol_rate: f64,
) -> Result<ProbeFrame> {
    if samples_per_symbol == 0 {
        return Err(Error::InvalidInput("samples_per_symbol must be ≥ 1".into()));
    }
    if !(symbol_rate > 0.0 && symbol_rate.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "symbol rate must be positive, got {symbol_rate}"
        )));
    }
    let code = pair.sequence(which);
    let mut symbols = Vec::with_capacity(code.len() + zero_pad_symbols);
    symbols.extend_from_slice(code);
    symbols.resize(code.len() + zero_pad_symbols, 0);
    Ok(ProbeFrame {
        symbols,
        code_len: code.len(),
        symbol_rate,
        samples_per_symbol,
        which,
    })
}

/// Round-trip time of a fiber of length `fiber_length` in seconds.
pub fn round_trip_time(fiber_length: f64, group_index: f64) -> f64 {
    2.0 * fiber_length * group_index / SPEED_OF_LIGHT
}

/// Zero padding, in symbols, that keeps only one code in flight:
/// `ceil(R · 2·L·n_g / c)`.
pub fn required_zero_pad(fiber_length: f64, group_index: f64, symbol_rate: f64) -> usize {
    if fiber_length <= 0.0 {
        return 0;
    }
    let symbols = symbol_rate * round_trip_time(fiber_length, group_index);
    // A product that lands a hair above an integer through rounding alone
    // should not cost an extra symbol.
    (symbols * (1.0 - 1e-12)).ceil() as usize
}

/// Two-point resolution set by the chip duration: `c / (2·n_g·R)`.
pub fn spatial_resolution(symbol_rate: f64, group_index: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * group_index * symbol_rate)
}
