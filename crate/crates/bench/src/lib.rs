//! Shared inputs for the benchmarks.

use ccotdr_core::probe::{build_frame, golay_pair, Which};
use ccotdr_core::Correlator;
use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Frame length in symbols for the throughput benchmark (code plus pad).
pub const FRAME_SYMBOLS: usize = 4096;
pub const SAMPLES_PER_SYMBOL: usize = 2;
pub const SHOTS: usize = 1000;

/// Correlator for an order-11 code padded to `FRAME_SYMBOLS`, and a random
/// received shot of matching length.
pub fn correlator_input() -> (Correlator<f32>, Vec<Complex32>) {
    let pair = golay_pair(11).unwrap();
    let frame = build_frame(&pair, Which::A, SAMPLES_PER_SYMBOL, FRAME_SYMBOLS - pair.len(), 1e9).unwrap();
    let n = frame.len_samples();
    let corr = Correlator::new(&frame.reference(), n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shot = (0..n)
        .map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    (corr, shot)
}
