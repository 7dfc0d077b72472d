//! Single-shot coherent back-scatter simulation.
//!
//! The received field of one shot is
//!
//! ```text
//! r[m] = Σ_k a_k · s[m − d_k] · exp(i·θ_k(t)) + noise
//! θ_k(t) = −q·(2π/λ)·(n_g·z_k + ΔOPL(z_k, t)) + φ[m] − φ[m − d_k]
//! ```
//!
//! with `q` the phase-convention factor and `φ` the laser phase walk shared
//! by the probe and the local oscillator. Because the laser term splits into
//! a receive-time and a transmit-time factor, the sum is evaluated exactly as
//! `e^{iφ} · (h ⊛ (s·e^{−iφ}))` with one FFT convolution per polarization,
//! where `h` is the fiber impulse response on the sample grid.
//!
//! Elements outside every event span only ever see a common phase rotation
//! (the cumulative path change of the spans upstream of them), so they are
//! folded into a handful of precomputed partial responses. Only elements
//! inside a span are re-evaluated per shot.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::fibermodel::{EnvironmentEvent, FiberModel, SensingConstants};
use crate::probe::{build_frame, required_zero_pad, GolayPair, ProbeFrame, Which};
use crate::SPEED_OF_LIGHT;

/// Default laser linewidth, Hz.
pub const DEFAULT_LINEWIDTH: f64 = 100.0;

/// Default Rayleigh-floor SNR of a single compressed shot, dB.
pub const DEFAULT_FLOOR_SNR_DB: f64 = 15.0;

const LASER_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserModel {
    pub wavelength: f64,
    /// Lorentzian linewidth Δν, Hz.
    pub linewidth: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation per quadrature per sample, field units.
    pub awgn_sigma: f64,
    pub enabled: bool,
}

impl NoiseModel {
    pub fn off() -> Self {
        NoiseModel {
            awgn_sigma: 0.0,
            enabled: false,
        }
    }

    fn active(&self) -> bool {
        self.enabled && self.awgn_sigma > 0.0
    }
}

/// Raw received IQ of one probing shot, both polarizations.
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub timestamp: f64,
    pub which: Which,
    pub iq_x: Vec<Complex32>,
    pub iq_y: Vec<Complex32>,
    pub sample_rate: f64,
}

/// Wiener phase walk: `φ[0] = 0`, increments `N(0, 2π·Δν·Ts)`.
pub fn laser_phase_walk(linewidth: f64, n: usize, sample_period: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LASER_STREAM);
    phase_walk_with(&mut rng, linewidth, n, sample_period)
}

fn phase_walk_with(rng: &mut ChaCha8Rng, linewidth: f64, n: usize, sample_period: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(0.0);
    if linewidth <= 0.0 {
        out.resize(n, 0.0);
        return out;
    }
    let sigma = (TAU * linewidth * sample_period).sqrt();
    let mut phi = 0.0;
    for _ in 1..n {
        let step: f64 = rng.sample(StandardNormal);
        phi += sigma * step;
        out.push(phi);
    }
    out
}

/// `exp(iφ[m])` of the same walk [`phase_walk_with`] draws, built by
/// rotating one sample to the next.
fn laser_phasors(rng: &mut ChaCha8Rng, linewidth: f64, n: usize, sample_period: f64) -> Vec<Complex32> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let sigma = (TAU * linewidth * sample_period).sqrt();
    let mut p = Complex64::new(1.0, 0.0);
    out.push(Complex32::new(1.0, 0.0));
    for m in 1..n {
        let step: f64 = rng.sample(StandardNormal);
        let d = sigma * step;
        let rot = if d.abs() < 1e-2 {
            // Series to the sixth order is exact in double precision here.
            let d2 = d * d;
            Complex64::new(
                1.0 - d2 / 2.0 * (1.0 - d2 / 12.0 * (1.0 - d2 / 30.0)),
                d * (1.0 - d2 / 6.0 * (1.0 - d2 / 20.0)),
            )
        } else {
            let (s, c) = d.sin_cos();
            Complex64::new(c, s)
        };
        p *= rot;
        if m % 512 == 0 {
            p /= p.norm();
        }
        out.push(to_c32_one(p));
    }
    out
}

/// AWGN level that puts the compressed single-shot Rayleigh floor
/// (summed over polarizations) `snr_db` above the noise.
///
/// `floor_power` is the mean compressed floor power per position sample,
/// `reference_energy` is `N·sps` of the correlation reference.
pub fn awgn_sigma_for_floor_snr(floor_power: f64, reference_energy: f64, snr_db: f64) -> f64 {
    // Compressed noise power per polarization is 2σ²/E; two polarizations.
    (floor_power * reference_energy / (4.0 * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Sum of squared samples of the triangular point-spread function at `sps`
/// samples per symbol.
pub fn psf_energy(samples_per_symbol: usize) -> f64 {
    let s = samples_per_symbol as f64;
    (2.0 * s * s + 1.0) / (3.0 * s)
}

/// Round-trip delay of position `z` in whole samples.
pub fn delay_samples(z: f64, group_index: f64, sample_rate: f64) -> usize {
    (2.0 * z * group_index / SPEED_OF_LIGHT * sample_rate).round() as usize
}

#[derive(Debug, Clone, Copy)]
struct DynamicElement {
    delay: usize,
    amplitude: [Complex32; 2],
    mask_index: usize,
    weight_offset: usize,
}

/// Precomputed simulation state for one fiber, probe and laser wavelength.
pub struct ShotSimulator {
    frames: [Option<ProbeFrame>; 2],
    frame_samples: [Option<Vec<f32>>; 2],
    frame_spectra: [Option<Vec<Complex32>>; 2],
    frame_len: usize,
    code_samples: usize,
    sample_rate: f64,
    fft_len: usize,
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
    events: Vec<EnvironmentEvent>,
    full_weights: Vec<f64>,
    group_index: f64,
    constants: SensingConstants,
    phase_scale: f64,
    static_classes: Vec<(usize, [Vec<Complex32>; 2])>,
    masks: Vec<u64>,
    dynamic: Vec<DynamicElement>,
    dynamic_weights: Vec<f64>,
    laser: LaserModel,
    noise: NoiseModel,
}

impl ShotSimulator {
    /// Prepares a simulator for both frames of a Golay pair.
    #[allow(clippy::too_many_arguments)]
    pub fn for_pair(
        model: &FiberModel,
        pair: &GolayPair,
        samples_per_symbol: usize,
        zero_pad_symbols: usize,
        symbol_rate: f64,
        events: &[EnvironmentEvent],
        constants: &SensingConstants,
        laser: &LaserModel,
        noise: &NoiseModel,
    ) -> Result<Self> {
        let a = build_frame(pair, Which::A, samples_per_symbol, zero_pad_symbols, symbol_rate)?;
        let b = build_frame(pair, Which::B, samples_per_symbol, zero_pad_symbols, symbol_rate)?;
        Self::new(model, vec![a, b], events, constants, laser, noise)
    }

    /// Prepares a simulator for the given frames, which must share their
    /// length, symbol rate and oversampling.
    pub fn new(
        model: &FiberModel,
        frames: Vec<ProbeFrame>,
        events: &[EnvironmentEvent],
        constants: &SensingConstants,
        laser: &LaserModel,
        noise: &NoiseModel,
    ) -> Result<Self> {
        model.validate()?;
        constants.validate()?;
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidInput("no probe frame given".into()))?
            .clone();
        if frames.iter().any(|f| {
            f.len_samples() != first.len_samples()
                || f.symbol_rate() != first.symbol_rate()
                || f.samples_per_symbol() != first.samples_per_symbol()
                || f.code_len() != first.code_len()
        }) {
            return Err(Error::GeometryMismatch(
                "frames of one simulator must share their geometry".into(),
            ));
        }
        let need = required_zero_pad(model.length, model.group_index, first.symbol_rate());
        if first.zero_pad_symbols() < need {
            return Err(Error::Overlap(format!(
                "zero pad of {} symbols is shorter than the {need} symbols the {} m fiber needs",
                first.zero_pad_symbols(),
                model.length
            )));
        }
        if events.len() > 64 {
            return Err(Error::Size("at most 64 simultaneous events".into()));
        }
        for e in events {
            e.validate(model.length)?;
        }
        if !(laser.wavelength > 0.0) || !(laser.linewidth >= 0.0) {
            return Err(Error::InvalidInput("laser wavelength > 0 and linewidth ≥ 0 required".into()));
        }
        if !(noise.awgn_sigma >= 0.0) {
            return Err(Error::InvalidInput("AWGN sigma must be ≥ 0".into()));
        }

        let frame_len = first.len_samples();
        let sample_rate = first.sample_rate();
        let code_samples = first.code_len() * first.samples_per_symbol();
        // The linear convolution of the impulse response with the code never
        // extends past the frame, so a transform of the frame length suffices.
        let fft_len = frame_len.next_power_of_two();
        let mut planner = FftPlanner::<f32>::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);

        let mut frame_slots: [Option<ProbeFrame>; 2] = [None, None];
        let mut frame_samples: [Option<Vec<f32>>; 2] = [None, None];
        let mut frame_spectra: [Option<Vec<Complex32>>; 2] = [None, None];
        for f in frames {
            let slot = slot(f.which());
            let samples = f.samples();
            let mut spec: Vec<Complex32> = samples.iter().map(|&v| Complex32::new(v, 0.0)).collect();
            spec.resize(fft_len, Complex32::default());
            forward.process(&mut spec);
            frame_samples[slot] = Some(samples);
            frame_spectra[slot] = Some(spec);
            frame_slots[slot] = Some(f);
        }

        let k0 = TAU / laser.wavelength;
        let phase_scale = constants.convention.factor() * k0;
        let full_weights: Vec<f64> = events.iter().map(|e| e.full_weight()).collect();

        let mut classes: BTreeMap<usize, [Vec<Complex32>; 2]> = BTreeMap::new();
        let mut class_acc: BTreeMap<u64, [Vec<Complex64>; 2]> = BTreeMap::new();
        let mut dynamic = Vec::new();
        let mut dynamic_weights = Vec::new();
        let mut masks: Vec<u64> = Vec::new();
        let mut mask_index = |mask: u64| -> usize {
            masks.iter().position(|&m| m == mask).unwrap_or_else(|| {
                masks.push(mask);
                masks.len() - 1
            })
        };
        for el in model.elements(laser.wavelength) {
            let z = el.position;
            let delay = delay_samples(z, model.group_index, sample_rate);
            debug_assert!(delay + code_samples <= frame_len);
            let static_phase = -phase_scale * model.group_index * z;
            let base = el.reflectivity
                * model.round_trip_field_loss(z)
                * Complex64::from_polar(1.0, static_phase.rem_euclid(TAU));
            let jones = model.polarization.jones_at(z);
            let amplitude = [base * jones[0], base * jones[1]];

            let mut upstream_mask = 0u64;
            let mut inside = false;
            for (i, e) in events.iter().enumerate() {
                let (a, b) = e.span();
                if z >= b {
                    upstream_mask |= 1 << i;
                } else if z > a {
                    inside = true;
                }
            }
            if inside {
                let weight_offset = dynamic_weights.len();
                for (i, e) in events.iter().enumerate() {
                    // Spans fully behind the element are carried by the mask.
                    let w = if upstream_mask & (1 << i) != 0 {
                        0.0
                    } else {
                        e.spatial_weight(z)
                    };
                    dynamic_weights.push(w);
                }
                dynamic.push(DynamicElement {
                    delay,
                    amplitude: [to_c32_one(amplitude[0]), to_c32_one(amplitude[1])],
                    mask_index: mask_index(upstream_mask),
                    weight_offset,
                });
            } else {
                let acc = class_acc.entry(upstream_mask).or_insert_with(|| {
                    [
                        vec![Complex64::default(); fft_len],
                        vec![Complex64::default(); fft_len],
                    ]
                });
                acc[0][delay] += amplitude[0];
                acc[1][delay] += amplitude[1];
            }
        }
        for (mask, [x, y]) in class_acc {
            classes.insert(mask_index(mask), [to_c32(&x), to_c32(&y)]);
        }

        Ok(ShotSimulator {
            frames: frame_slots,
            frame_samples,
            frame_spectra,
            frame_len,
            code_samples,
            sample_rate,
            fft_len,
            forward,
            inverse,
            events: events.to_vec(),
            full_weights,
            group_index: model.group_index,
            constants: *constants,
            phase_scale,
            static_classes: classes.into_iter().collect(),
            masks,
            dynamic,
            dynamic_weights,
            laser: *laser,
            noise: *noise,
        })
    }

    pub fn frame(&self, which: Which) -> Option<&ProbeFrame> {
        self.frames[slot(which)].as_ref()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Frame repetition period, seconds.
    pub fn frame_duration(&self) -> f64 {
        self.frame_len as f64 / self.sample_rate
    }

    /// Elements that are re-evaluated every shot.
    pub fn dynamic_element_count(&self) -> usize {
        self.dynamic.len()
    }

    /// Simulates one shot at time `t`. `seed` drives the laser phase walk and
    /// the receiver noise.
    pub fn simulate(&self, which: Which, t: f64, seed: u64) -> Result<Shot> {
        let slot = slot(which);
        let (Some(samples), Some(spectrum)) = (&self.frame_samples[slot], &self.frame_spectra[slot])
        else {
            return Err(Error::InvalidInput(format!("simulator has no {which:?} frame")));
        };
        let n = self.fft_len;

        // Fiber impulse response at time t.
        let coeffs: Vec<f64> = self
            .events
            .iter()
            .map(|e| e.time_coefficient(t, self.group_index, &self.constants))
            .collect();
        // Path change carried by each combination of upstream spans.
        let mask_opl: Vec<f64> = self
            .masks
            .iter()
            .map(|&mask| {
                let mut acc = 0.0;
                let mut m = mask;
                while m != 0 {
                    let i = m.trailing_zeros() as usize;
                    acc += coeffs[i] * self.full_weights[i];
                    m &= m - 1;
                }
                acc
            })
            .collect();
        let mut hx = vec![Complex32::default(); n];
        let mut hy = vec![Complex32::default(); n];
        for (mask, [cx, cy]) in &self.static_classes {
            let rot = phasor(-self.phase_scale * mask_opl[*mask]);
            for ((h, &c), (g, &d)) in hx.iter_mut().zip(cx).zip(hy.iter_mut().zip(cy)) {
                *h += c * rot;
                *g += d * rot;
            }
        }
        let n_events = self.events.len();
        for el in &self.dynamic {
            let w = &self.dynamic_weights[el.weight_offset..el.weight_offset + n_events];
            let opl: f64 =
                mask_opl[el.mask_index] + w.iter().zip(&coeffs).map(|(w, c)| w * c).sum::<f64>();
            // Reduce in double precision; the reduced angle is fine in single.
            let (sin, cos) = ((-self.phase_scale * opl).rem_euclid(TAU) as f32).sin_cos();
            let rot = Complex32::new(cos, sin);
            hx[el.delay] += el.amplitude[0] * rot;
            hy[el.delay] += el.amplitude[1] * rot;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(LASER_STREAM);
        let laser_on = self.laser.linewidth > 0.0;
        let walk = if laser_on {
            laser_phasors(&mut rng, self.laser.linewidth, self.frame_len, 1.0 / self.sample_rate)
        } else {
            Vec::new()
        };

        let mut scratch = vec![Complex32::default(); self.forward.get_inplace_scratch_len()];
        let transmitted: std::borrow::Cow<'_, [Complex32]> = if laser_on {
            // Only the code part of the frame is non-zero.
            let mut s = vec![Complex32::default(); n];
            for m in 0..self.code_samples {
                s[m] = walk[m].conj() * samples[m];
            }
            self.forward.process_with_scratch(&mut s, &mut scratch);
            std::borrow::Cow::Owned(s)
        } else {
            std::borrow::Cow::Borrowed(spectrum.as_slice())
        };

        let scale = 1.0 / n as f32;
        let mut outputs = [hx, hy];
        for h in outputs.iter_mut() {
            self.forward.process_with_scratch(h, &mut scratch);
            for (v, s) in h.iter_mut().zip(transmitted.iter()) {
                *v = *v * *s * scale;
            }
            self.inverse.process_with_scratch(h, &mut scratch);
            h.truncate(self.frame_len);
            if laser_on {
                for (v, &p) in h.iter_mut().zip(&walk) {
                    *v *= p;
                }
            }
        }

        if self.noise.active() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(NOISE_STREAM);
            let sigma = self.noise.awgn_sigma as f32;
            for h in outputs.iter_mut() {
                for v in h.iter_mut() {
                    let re: f32 = rng.sample(StandardNormal);
                    let im: f32 = rng.sample(StandardNormal);
                    *v += Complex32::new(re * sigma, im * sigma);
                }
            }
        }

        let [iq_x, iq_y] = outputs;
        Ok(Shot {
            timestamp: t,
            which,
            iq_x,
            iq_y,
            sample_rate: self.sample_rate,
        })
    }
}

fn slot(which: Which) -> usize {
    match which {
        Which::A => 0,
        Which::B => 1,
    }
}

fn phasor(angle: f64) -> Complex32 {
    let (s, c) = angle.rem_euclid(TAU).sin_cos();
    Complex32::new(c as f32, s as f32)
}

fn to_c32_one(c: Complex64) -> Complex32 {
    Complex32::new(c.re as f32, c.im as f32)
}

fn to_c32(v: &[Complex64]) -> Vec<Complex32> {
    v.iter()
        .map(|c| Complex32::new(c.re as f32, c.im as f32))
        .collect()
}

/// Simulates a single shot of `frame` at time `t`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_shot(
    model: &FiberModel,
    frame: &ProbeFrame,
    events: &[EnvironmentEvent],
    constants: &SensingConstants,
    laser: &LaserModel,
    noise: &NoiseModel,
    t: f64,
    seed: u64,
) -> Result<Shot> {
    let sim = ShotSimulator::new(model, vec![frame.clone()], events, constants, laser, noise)?;
    sim.simulate(frame.which(), t, seed)
}

/// When the shots of an A/B pair fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairTiming {
    /// Shot `i` at `i / shot_rate`.
    #[default]
    Uniform,
    /// Pairs start every `2 / shot_rate`; B fires one frame after A, so the
    /// fiber barely moves between the two codes.
    Burst,
}

impl PairTiming {
    pub fn timestamp(self, i: usize, shot_rate: f64, frame_duration: f64) -> f64 {
        match self {
            PairTiming::Uniform => i as f64 / shot_rate,
            PairTiming::Burst => (i - i % 2) as f64 / shot_rate + (i % 2) as f64 * frame_duration,
        }
    }
}

/// A stream of alternating A/B shots at a fixed shot rate.
pub struct Campaign {
    simulator: ShotSimulator,
    shot_rate: f64,
    shots: usize,
    seed: u64,
    timing: PairTiming,
}

impl Campaign {
    pub fn new(simulator: ShotSimulator, shot_rate: f64, duration: f64, seed: u64) -> Result<Self> {
        if simulator.frame(Which::A).is_none() || simulator.frame(Which::B).is_none() {
            return Err(Error::InvalidInput("a campaign needs both frames of the pair".into()));
        }
        if !(shot_rate > 0.0) || !(duration >= 0.0) {
            return Err(Error::InvalidInput("shot rate > 0 and duration ≥ 0 required".into()));
        }
        let max_rate = 1.0 / simulator.frame_duration();
        if shot_rate > max_rate * (1.0 + 1e-12) {
            return Err(Error::Overlap(format!(
                "shot rate {shot_rate} Hz exceeds 1/frame duration = {max_rate:.1} Hz"
            )));
        }
        let shots = (duration * shot_rate).round() as usize;
        Ok(Campaign {
            simulator,
            shot_rate,
            shots,
            seed,
            timing: PairTiming::Uniform,
        })
    }

    pub fn with_pair_timing(mut self, timing: PairTiming) -> Self {
        self.timing = timing;
        self
    }

    pub fn pair_timing(&self) -> PairTiming {
        self.timing
    }

    pub fn len(&self) -> usize {
        self.shots
    }

    pub fn is_empty(&self) -> bool {
        self.shots == 0
    }

    pub fn shot_rate(&self) -> f64 {
        self.shot_rate
    }

    pub fn simulator(&self) -> &ShotSimulator {
        &self.simulator
    }

    pub fn which(i: usize) -> Which {
        if i % 2 == 0 {
            Which::A
        } else {
            Which::B
        }
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.timing
            .timestamp(i, self.shot_rate, self.simulator.frame_duration())
    }

    /// Shot `i`; independent of the order in which shots are requested.
    pub fn shot(&self, i: usize) -> Result<Shot> {
        self.simulator
            .simulate(Self::which(i), self.timestamp(i), self.seed ^ i as u64)
    }

    /// Shots `range`, evaluated on the current rayon pool, in order.
    pub fn shots(&self, range: std::ops::Range<usize>) -> Result<Vec<Shot>> {
        range.into_par_iter().map(|i| self.shot(i)).collect()
    }
}

/// Runs a whole campaign and returns its shots in order.
#[allow(clippy::too_many_arguments)]
pub fn run_campaign(
    model: &FiberModel,
    pair: &GolayPair,
    samples_per_symbol: usize,
    zero_pad_symbols: usize,
    symbol_rate: f64,
    events: &[EnvironmentEvent],
    constants: &SensingConstants,
    laser: &LaserModel,
    noise: &NoiseModel,
    shot_rate: f64,
    duration: f64,
    seed: u64,
) -> Result<Vec<Shot>> {
    let sim = ShotSimulator::for_pair(
        model,
        pair,
        samples_per_symbol,
        zero_pad_symbols,
        symbol_rate,
        events,
        constants,
        laser,
        noise,
    )?;
    let campaign = Campaign::new(sim, shot_rate, duration, seed)?;
    campaign.shots(0..campaign.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibermodel::{generate_scatterers, PhaseConvention, PolarizationField};
    use crate::probe::golay_pair;

    fn laser(linewidth: f64) -> LaserModel {
        LaserModel {
            wavelength: 1550e-9,
            linewidth,
            seed: 0,
        }
    }

    #[test]
    fn phase_walk_basics() {
        assert!(laser_phase_walk(0.0, 100, 1e-9, 1).iter().all(|&p| p == 0.0));
        let a = laser_phase_walk(100.0, 1000, 1e-9, 5);
        assert_eq!(a, laser_phase_walk(100.0, 1000, 1e-9, 5));
        assert_eq!(a[0], 0.0);
        assert_ne!(a, laser_phase_walk(100.0, 1000, 1e-9, 6));
    }

    #[test]
    fn phase_walk_increment_variance() {
        let n = 1_000_000;
        let walk = laser_phase_walk(100.0, n, 1e-9, 11);
        let inc: Vec<f64> = walk.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = inc.iter().sum::<f64>() / inc.len() as f64;
        let var = inc.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
        let expected = TAU * 1e-7;
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} vs {expected}");
    }

    fn one_reflector(z: f64) -> FiberModel {
        FiberModel::new(20.0, 1.468, 0.2, 1550e-9)
            .unwrap()
            .add_point_reflector(z, -10.0)
            .unwrap()
    }

    #[test]
    fn single_reflector_is_a_delayed_copy() {
        let model = one_reflector(7.3);
        let pair = golay_pair(5).unwrap();
        let pad = required_zero_pad(20.0, 1.468, 1e9);
        let frame = build_frame(&pair, Which::A, 2, pad, 1e9).unwrap();
        let shot = simulate_shot(
            &model,
            &frame,
            &[],
            &SensingConstants::default(),
            &laser(0.0),
            &NoiseModel::off(),
            0.0,
            1,
        )
        .unwrap();
        let d = delay_samples(7.3, 1.468, 2e9);
        let s = frame.samples();
        let gain = shot.iq_x[d] / s[0];
        assert!((gain.norm() as f64 - model.reflectors[0].amplitude() * model.round_trip_field_loss(7.3)).abs() < 1e-6);
        for (m, v) in shot.iq_x.iter().enumerate() {
            let expect = if m >= d { gain * s[m - d] } else { Complex32::default() };
            assert!((v - expect).norm() < 1e-6, "sample {m}");
        }
        assert!(shot.iq_y.iter().all(|v| v.norm() < 1e-6));
    }

    /// Direct evaluation of the echo sum, used as the oracle for the FFT path.
    fn direct_shot(model: &FiberModel, frame: &ProbeFrame, walk: &[f64], q: f64, t: f64, events: &[EnvironmentEvent]) -> Vec<Complex64> {
        let s = frame.samples();
        let fs = frame.sample_rate();
        let k0 = TAU / model.wavelength;
        let consts = SensingConstants::default();
        let mut out = vec![Complex64::default(); s.len()];
        for el in model.elements(model.wavelength) {
            let z = el.position;
            let d = delay_samples(z, model.group_index, fs);
            let opl = crate::fibermodel::delta_opl(events, model.group_index, &consts, z, t);
            let a = el.reflectivity * model.round_trip_field_loss(z) * model.polarization.jones_at(z)[0];
            for m in d..s.len() {
                let theta = -q * k0 * (model.group_index * z + opl) + walk[m] - walk[m - d];
                out[m] += a * s[m - d] as f64 * Complex64::from_polar(1.0, theta);
            }
        }
        out
    }

    #[test]
    fn fft_path_matches_direct_sum_with_phase_noise() {
        let mut model = FiberModel::new(6.0, 1.468, 0.2, 1550e-9)
            .unwrap()
            .with_scatterers(generate_scatterers(6.0, 20.0, 0.01, 4).unwrap())
            .unwrap()
            .add_point_reflector(5.0, -20.0)
            .unwrap();
        model.polarization = PolarizationField::random(6.0, 2.0, 1).unwrap();
        let events = vec![EnvironmentEvent::StrainTone {
            span: (2.0, 3.0),
            amplitude: 2e-7,
            frequency: 50.0,
            phase: 0.3,
        }];
        let pair = golay_pair(4).unwrap();
        let pad = required_zero_pad(6.0, 1.468, 1e9);
        let frame = build_frame(&pair, Which::B, 2, pad, 1e9).unwrap();
        // A huge linewidth makes the laser term visible within one frame.
        let las = laser(5e6);
        let t = 1.7e-3;
        let seed = 99;
        let shot = simulate_shot(&model, &frame, &events, &SensingConstants::default(), &las, &NoiseModel::off(), t, seed).unwrap();
        let walk = laser_phase_walk(las.linewidth, frame.len_samples(), 1.0 / frame.sample_rate(), seed);
        let direct = direct_shot(&model, &frame, &walk, 1.0, t, &events);
        let peak = direct.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (m, (a, b)) in shot.iq_x.iter().zip(&direct).enumerate() {
            let diff = Complex64::new(a.re as f64, a.im as f64) - b;
            assert!(diff.norm() < 1e-5 * peak, "sample {m}: {a} vs {b}");
        }
    }

    #[test]
    fn static_fiber_is_deterministic() {
        let model = FiberModel::new(30.0, 1.468, 0.2, 1550e-9)
            .unwrap()
            .with_scatterers(generate_scatterers(30.0, 50.0, 1e-3, 2).unwrap())
            .unwrap();
        let pair = golay_pair(6).unwrap();
        let pad = required_zero_pad(30.0, 1.468, 1e9);
        let sim = ShotSimulator::for_pair(&model, &pair, 2, pad, 1e9, &[], &SensingConstants::default(), &laser(0.0), &NoiseModel::off()).unwrap();
        let a = sim.simulate(Which::A, 0.0, 1).unwrap();
        let b = sim.simulate(Which::A, 0.37, 2).unwrap();
        assert_eq!(a.iq_x, b.iq_x);
        assert_eq!(a.iq_y, b.iq_y);
    }

    #[test]
    fn half_wavelength_path_change() {
        // One reflector inside a strained span; choose the tone so that at
        // t = 0 the element's ΔOPL is exactly λ/2.
        let lambda = 1550e-9;
        let base = FiberModel::new(20.0, 1.468, 0.0, lambda)
            .unwrap()
            .add_point_reflector(10.0, 0.0)
            .unwrap();
        let pair = golay_pair(3).unwrap();
        let pad = required_zero_pad(20.0, 1.468, 1e9);
        let frame = build_frame(&pair, Which::A, 2, pad, 1e9).unwrap();
        let consts = |convention| SensingConstants {
            strain_optic_factor: 0.79,
            convention,
        };
        // Weight at z = 10 of span [5, 15] is 0.5.
        let amplitude = (lambda / 2.0) / (1.468 * 0.79 * 0.5);
        let tone = vec![EnvironmentEvent::StrainTone {
            span: (5.0, 15.0),
            amplitude,
            frequency: 0.0,
            phase: std::f64::consts::FRAC_PI_2,
        }];
        let d = delay_samples(10.0, 1.468, 2e9);
        for (convention, expected) in [(PhaseConvention::DoublePass, -TAU), (PhaseConvention::SinglePass, -std::f64::consts::PI)] {
            let c = consts(convention);
            let still = simulate_shot(&base, &frame, &[], &c, &laser(0.0), &NoiseModel::off(), 0.0, 0).unwrap();
            let moved = simulate_shot(&base, &frame, &tone, &c, &laser(0.0), &NoiseModel::off(), 0.0, 0).unwrap();
            let rot = (moved.iq_x[d] / still.iq_x[d]).arg() as f64;
            let wrapped = (expected + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
            let err = ((rot - wrapped + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI).abs();
            assert!(err < 1e-4, "{convention:?}: rotation {rot}");
            if convention == PhaseConvention::DoublePass {
                for (a, b) in moved.iq_x.iter().zip(&still.iq_x) {
                    assert!((a - b).norm() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn campaign_shape_and_order_independence() {
        let model = FiberModel::new(30.0, 1.468, 0.2, 1550e-9)
            .unwrap()
            .with_scatterers(generate_scatterers(30.0, 20.0, 1e-3, 2).unwrap())
            .unwrap();
        let pair = golay_pair(4).unwrap();
        let pad = required_zero_pad(30.0, 1.468, 1e9);
        let noise = NoiseModel { awgn_sigma: 1e-3, enabled: true };
        let sim = ShotSimulator::for_pair(&model, &pair, 2, pad, 1e9, &[], &SensingConstants::default(), &laser(100.0), &noise).unwrap();
        let c = Campaign::new(sim, 2000.0, 1.0, 42).unwrap();
        assert_eq!(c.len(), 2000);
        let order: Vec<Which> = (0..4).map(Campaign::which).collect();
        assert_eq!(order, vec![Which::A, Which::B, Which::A, Which::B]);
        let batch = c.shots(10..14).unwrap();
        for (k, i) in (10..14).rev().enumerate() {
            let single = c.shot(i).unwrap();
            assert_eq!(single, batch[3 - k]);
        }
        assert!((batch[1].timestamp - 11.0 / 2000.0).abs() < 1e-15);
        let frame = c.simulator().frame_duration();
        let burst = c.with_pair_timing(PairTiming::Burst);
        assert_eq!(burst.timestamp(10), 10.0 / 2000.0);
        assert!((burst.timestamp(11) - (10.0 / 2000.0 + frame)).abs() < 1e-15);
        assert_eq!(burst.shot(11).unwrap().timestamp, burst.timestamp(11));
    }

    #[test]
    fn overlap_is_rejected() {
        let model = FiberModel::new(100.0, 1.468, 0.2, 1550e-9).unwrap();
        let pair = golay_pair(4).unwrap();
        let short = required_zero_pad(100.0, 1.468, 1e9) - 1;
        let err = ShotSimulator::for_pair(&model, &pair, 2, short, 1e9, &[], &SensingConstants::default(), &laser(0.0), &NoiseModel::off());
        assert!(matches!(err, Err(Error::Overlap(_))));
        let pad = short + 1;
        let sim = ShotSimulator::for_pair(&model, &pair, 2, pad, 1e9, &[], &SensingConstants::default(), &laser(0.0), &NoiseModel::off()).unwrap();
        let too_fast = 1.0 / sim.frame_duration() * 1.01;
        assert!(matches!(Campaign::new(sim, too_fast, 1.0, 0), Err(Error::Overlap(_))));
    }
}
