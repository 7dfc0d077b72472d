//! Correlation compression: received shots to complex reflectivity profiles.

use std::sync::Arc;

use num_complex::{Complex, Complex32};
use rustfft::{Fft, FftNum, FftPlanner};

use crate::error::{Error, Result};
use crate::sim::Shot;
use crate::SPEED_OF_LIGHT;

/// Distance of sample `index` of a profile from the fiber input:
/// `c·index / (2·n_g·fs)`.
pub fn position_axis(index: usize, sample_rate: f64, group_index: f64) -> f64 {
    SPEED_OF_LIGHT * index as f64 / (2.0 * group_index * sample_rate)
}

/// Spacing of profile samples for a given receiver sample rate.
pub fn position_step(sample_rate: f64, group_index: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * group_index * sample_rate)
}

/// Nearest profile index of a position.
pub fn position_to_index(z: f64, sample_rate: f64, group_index: f64) -> usize {
    (z / position_step(sample_rate, group_index)).round().max(0.0) as usize
}

/// Matched filter against a fixed real reference, for inputs of a fixed
/// length. Output sample `j` is `Σ_m r[j+m]·ref[m] / Σ_m ref[m]²`, for
/// `j` in `0..=len(received) − len(reference)`.
pub struct Correlator<T: FftNum> {
    input_len: usize,
    output_len: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    // conj(FFT(reference)) / (energy · fft_len)
    reference_spectrum: Vec<Complex<T>>,
}

impl<T: FftNum> Correlator<T> {
    pub fn new(reference: &[T], input_len: usize) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::InvalidInput("empty correlation reference".into()));
        }
        if input_len < reference.len() {
            return Err(Error::InvalidInput(format!(
                "received length {input_len} shorter than reference length {}",
                reference.len()
            )));
        }
        let energy = reference
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v);
        if energy == T::zero() {
            return Err(Error::InvalidInput("correlation reference has zero energy".into()));
        }
        // Only lags with full overlap are kept, and those never wrap around
        // a transform as long as the input itself.
        let fft_len = input_len.next_power_of_two();
        let mut planner = FftPlanner::<T>::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let mut spec: Vec<Complex<T>> = reference
            .iter()
            .map(|&v| Complex::new(v, T::zero()))
            .collect();
        spec.resize(fft_len, Complex::new(T::zero(), T::zero()));
        forward.process(&mut spec);
        let scale = T::one() / (energy * from_usize::<T>(fft_len));
        for v in spec.iter_mut() {
            *v = v.conj() * scale;
        }
        Ok(Correlator {
            input_len,
            output_len: input_len - reference.len() + 1,
            fft_len,
            forward,
            inverse,
            reference_spectrum: spec,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn correlate(&self, received: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        let mut buf = Vec::with_capacity(self.fft_len);
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.scratch_len()];
        self.correlate_into(received, &mut buf, &mut scratch)?;
        Ok(buf)
    }

    pub fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    /// Allocation-free variant; `out` is resized to the output length.
    pub fn correlate_into(
        &self,
        received: &[Complex<T>],
        out: &mut Vec<Complex<T>>,
        scratch: &mut [Complex<T>],
    ) -> Result<()> {
        if received.len() != self.input_len {
            return Err(Error::InvalidInput(format!(
                "correlator built for {} samples, got {}",
                self.input_len,
                received.len()
            )));
        }
        out.clear();
        out.extend_from_slice(received);
        out.resize(self.fft_len, Complex::new(T::zero(), T::zero()));
        self.forward.process_with_scratch(out, scratch);
        for (v, r) in out.iter_mut().zip(&self.reference_spectrum) {
            *v = *v * *r;
        }
        self.inverse.process_with_scratch(out, scratch);
        out.truncate(self.output_len);
        Ok(())
    }
}

fn from_usize<T: FftNum>(v: usize) -> T {
    T::from_usize(v).expect("transform length fits the float type")
}

/// Energy-normalized aperiodic cross-correlation, valid lags only.
pub fn xcorr<T: FftNum>(received: &[Complex<T>], reference: &[T]) -> Result<Vec<Complex<T>>> {
    Correlator::new(reference, received.len())?.correlate(received)
}

/// Complex reflectivity versus position, per polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedProfile {
    pub x: Vec<Complex32>,
    pub y: Vec<Complex32>,
    pub position_step: f64,
    pub origin: f64,
    pub timestamp: f64,
}

impl CompressedProfile {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn position(&self, index: usize) -> f64 {
        self.origin + index as f64 * self.position_step
    }

    /// Nearest sample index of `z`, clamped to the profile.
    pub fn index_of(&self, z: f64) -> usize {
        let i = ((z - self.origin) / self.position_step).round();
        (i.max(0.0) as usize).min(self.len().saturating_sub(1))
    }

    pub fn end(&self) -> f64 {
        self.position(self.len().saturating_sub(1))
    }

    /// Power summed over polarizations at each position.
    pub fn power(&self) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.norm_sqr() as f64 + b.norm_sqr() as f64)
            .collect()
    }

    pub fn same_geometry(&self, other: &CompressedProfile) -> bool {
        self.len() == other.len()
            && geometry_close(self.position_step, other.position_step)
            && geometry_close(self.origin, other.origin)
    }
}

fn geometry_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-9)
}

/// Compresses both polarizations of a shot.
pub fn compress_shot(
    shot: &Shot,
    correlator: &Correlator<f32>,
    group_index: f64,
) -> Result<CompressedProfile> {
    let x = correlator.correlate(&shot.iq_x)?;
    let y = correlator.correlate(&shot.iq_y)?;
    Ok(CompressedProfile {
        x,
        y,
        position_step: position_step(shot.sample_rate, group_index),
        origin: 0.0,
        timestamp: shot.timestamp,
    })
}

/// Combines the profiles of the A and B shot of one pair. The autocorrelation
/// sidelobes of the two codes cancel; the result is scaled so an ideal
/// reflector keeps its field amplitude.
pub fn golay_compress(
    profile_a: &CompressedProfile,
    profile_b: &CompressedProfile,
) -> Result<CompressedProfile> {
    if !profile_a.same_geometry(profile_b) {
        return Err(Error::GeometryMismatch(format!(
            "A profile ({} samples, step {}, origin {}) vs B profile ({} samples, step {}, origin {})",
            profile_a.len(),
            profile_a.position_step,
            profile_a.origin,
            profile_b.len(),
            profile_b.position_step,
            profile_b.origin
        )));
    }
    let avg = |a: &[Complex32], b: &[Complex32]| -> Vec<Complex32> {
        a.iter().zip(b).map(|(u, v)| (u + v) * 0.5).collect()
    };
    Ok(CompressedProfile {
        x: avg(&profile_a.x, &profile_b.x),
        y: avg(&profile_a.y, &profile_b.y),
        position_step: profile_a.position_step,
        origin: profile_a.origin,
        timestamp: 0.5 * (profile_a.timestamp + profile_b.timestamp),
    })
}

/// Keeps the samples inside `window` (inclusive), then every `decimate`-th.
pub fn roi_gate(
    profile: &CompressedProfile,
    window: (f64, f64),
    decimate: usize,
) -> Result<CompressedProfile> {
    if decimate == 0 {
        return Err(Error::InvalidInput("decimation factor must be ≥ 1".into()));
    }
    let (lo, hi) = window;
    if !(lo <= hi) {
        return Err(Error::EmptyWindow(format!("window [{lo}, {hi}] is reversed")));
    }
    let step = profile.position_step;
    let tol = 1e-6;
    let first = ((lo - profile.origin) / step - tol).ceil().max(0.0) as usize;
    let last_f = ((hi - profile.origin) / step + tol).floor();
    if last_f < 0.0 || first >= profile.len() {
        return Err(Error::EmptyWindow(format!(
            "window [{lo}, {hi}] m misses the profile span [{}, {}] m",
            profile.origin,
            profile.end()
        )));
    }
    let last = (last_f as usize).min(profile.len() - 1);
    if first > last {
        return Err(Error::EmptyWindow(format!(
            "window [{lo}, {hi}] m contains no sample"
        )));
    }
    let pick = |v: &[Complex32]| -> Vec<Complex32> {
        v[first..=last].iter().step_by(decimate).copied().collect()
    };
    Ok(CompressedProfile {
        x: pick(&profile.x),
        y: pick(&profile.y),
        position_step: step * decimate as f64,
        origin: profile.position(first),
        timestamp: profile.timestamp,
    })
}

/// Time × position stack of profiles with shared geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfall {
    pub rows: Vec<CompressedProfile>,
    /// Spacing between rows, seconds.
    pub row_period: f64,
}

impl Waterfall {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cells(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn position_step(&self) -> f64 {
        self.rows[0].position_step
    }

    pub fn origin(&self) -> f64 {
        self.rows[0].origin
    }

    pub fn position(&self, cell: usize) -> f64 {
        self.rows[0].position(cell)
    }

    pub fn index_of(&self, z: f64) -> usize {
        self.rows[0].index_of(z)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.origin(), self.rows[0].end())
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.timestamp).collect()
    }
}

/// Stacks profiles into a waterfall; the row period is the median timestamp
/// spacing.
pub fn stack_waterfall(profiles: Vec<CompressedProfile>) -> Result<Waterfall> {
    let Some(first) = profiles.first() else {
        return Err(Error::InvalidInput("no profiles to stack".into()));
    };
    if first.is_empty() {
        return Err(Error::InvalidInput("profiles are empty".into()));
    }
    if let Some((i, _)) = profiles
        .iter()
        .enumerate()
        .find(|(_, p)| !p.same_geometry(first))
    {
        return Err(Error::GeometryMismatch(format!(
            "profile {i} does not share the geometry of profile 0"
        )));
    }
    let mut gaps: Vec<f64> = profiles
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .collect();
    if let Some(i) = gaps.iter().position(|&g| !(g > 0.0)) {
        return Err(Error::Ordering(format!(
            "timestamp of profile {} is not after profile {i}",
            i + 1
        )));
    }
    let row_period = if gaps.is_empty() {
        0.0
    } else {
        gaps.sort_by(f64::total_cmp);
        gaps[gaps.len() / 2]
    };
    if let Some(g) = gaps
        .iter()
        .find(|&&g| (g - row_period).abs() > 0.01 * row_period)
    {
        return Err(Error::Ordering(format!(
            "row spacing {g} s deviates from the median {row_period} s"
        )));
    }
    Ok(Waterfall {
        rows: profiles,
        row_period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn profile(n: usize, step: f64, t: f64) -> CompressedProfile {
        CompressedProfile {
            x: (0..n).map(|i| Complex32::new(i as f32, 0.0)).collect(),
            y: vec![Complex32::default(); n],
            position_step: step,
            origin: 0.0,
            timestamp: t,
        }
    }

    #[test]
    fn autocorrelation_peak_is_one() {
        let reference: Vec<f64> = vec![1.0, 1.0, -1.0, 1.0, -1.0, -1.0];
        let rx: Vec<Complex64> = reference.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let out = xcorr(&rx, &reference).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].re - 1.0).abs() < 1e-12);

        let mut delayed = vec![Complex64::default(); 5];
        delayed.extend(rx.iter().copied());
        delayed.extend(vec![Complex64::default(); 4]);
        let out = xcorr(&delayed, &reference).unwrap();
        assert_eq!(out.len(), delayed.len() - reference.len() + 1);
        let peak = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0;
        assert_eq!(peak, 5);
    }

    #[test]
    fn xcorr_rejects_short_input() {
        let r = vec![1.0f32; 8];
        let rx = vec![Complex32::default(); 4];
        assert!(xcorr(&rx, &r).is_err());
        assert!(xcorr(&rx, &[] as &[f32]).is_err());
    }

    #[test]
    fn axis() {
        assert_eq!(position_axis(0, 2e9, 1.468), 0.0);
        assert!((position_axis(1, 2e9, 1.468) - 0.05106).abs() < 1e-5);
        // 418 m at 2 GHz: 8187.38 samples.
        assert_eq!(position_to_index(418.0, 2e9, 1.468), 8187);
    }

    #[test]
    fn golay_combining_checks_geometry() {
        let a = profile(10, 0.05, 0.0);
        let b = profile(11, 0.05, 1e-3);
        assert!(matches!(golay_compress(&a, &b), Err(Error::GeometryMismatch(_))));
        let b = profile(10, 0.05, 1e-3);
        let c = golay_compress(&a, &b).unwrap();
        assert!((c.timestamp - 0.5e-3).abs() < 1e-15);
        assert_eq!(c.x, a.x);
        let zero = CompressedProfile {
            x: vec![Complex32::default(); 4],
            y: vec![Complex32::default(); 4],
            position_step: 1.0,
            origin: 0.0,
            timestamp: 0.0,
        };
        let z = golay_compress(&zero, &zero).unwrap();
        assert!(z.x.iter().chain(&z.y).all(|v| *v == Complex32::default()));
    }

    #[test]
    fn gating() {
        let p = profile(1000, 0.05106, 0.0);
        let same = roi_gate(&p, (0.0, p.end()), 1).unwrap();
        assert_eq!(same, p);

        let big = profile(8189, 0.0510541553133515, 0.0);
        let w = roi_gate(&big, (200.0, 230.0), 1).unwrap();
        assert!(w.len() == 588 || w.len() == 589, "{}", w.len());
        assert!(w.origin >= 200.0 && w.end() <= 230.0);

        let d = roi_gate(&p, (0.0, p.end()), 4).unwrap();
        assert_eq!(d.len(), 250);
        assert!((d.position_step - 4.0 * p.position_step).abs() < 1e-15);
        assert_eq!(d.x[1], p.x[4]);

        assert!(matches!(roi_gate(&p, (100.0, 120.0), 1), Err(Error::EmptyWindow(_))));
        assert!(matches!(roi_gate(&p, (1.001, 1.002), 1), Err(Error::EmptyWindow(_))));
        assert!(roi_gate(&p, (0.0, 1.0), 0).is_err());
    }

    #[test]
    fn stacking() {
        let rows: Vec<_> = (0..1000).map(|i| profile(16, 0.1, i as f64 * 1e-3)).collect();
        let w = stack_waterfall(rows).unwrap();
        assert_eq!((w.n_rows(), w.n_cells()), (1000, 16));
        assert!((w.row_period - 1e-3).abs() < 1e-12);

        let one = stack_waterfall(vec![profile(16, 0.1, 0.0)]).unwrap();
        assert_eq!(one.n_rows(), 1);

        let mut shuffled: Vec<_> = (0..10).map(|i| profile(16, 0.1, i as f64 * 1e-3)).collect();
        shuffled.swap(2, 7);
        assert!(matches!(stack_waterfall(shuffled), Err(Error::Ordering(_))));

        let mixed = vec![profile(16, 0.1, 0.0), profile(17, 0.1, 1.0)];
        assert!(matches!(stack_waterfall(mixed), Err(Error::GeometryMismatch(_))));
    }
}
