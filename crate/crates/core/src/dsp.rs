//! Analyses over compressed profiles: power fingerprint and change map,
//! differential phase with tone detection and localization, phase-slope
//! temperature extraction, and grating spectra from a wavelength sweep.

use std::f64::consts::{PI, TAU};

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::compress::{CompressedProfile, Waterfall};
use crate::error::{Error, Result};
use crate::fibermodel::{PhaseConvention, SensingConstants};

/// Cells whose power falls this far below their time-averaged power give
/// unreliable phase.
pub const LOW_CONFIDENCE_DB: f64 = -20.0;

/// Peak-over-median ratio for tone detection (6 dB).
pub const TONE_THRESHOLD: f64 = 3.981_071_705_534_973;

/// Unwrapped phase difference between two positions, one value per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSeries {
    pub values: Vec<f64>,
    pub sample_period: f64,
    pub gauge: (f64, f64),
    /// Rows where either cell was faded; their values are interpolated.
    pub low_confidence: Vec<bool>,
}

impl PhaseSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn low_confidence_count(&self) -> usize {
        self.low_confidence.iter().filter(|&&f| f).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemperatureKind {
    Core,
    ChamberEstimate,
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSeries {
    pub values: Vec<f64>,
    pub sample_period: f64,
    /// Time of the first sample, seconds.
    pub start: f64,
    pub kind: TemperatureKind,
}

impl TemperatureSeries {
    pub fn time(&self, i: usize) -> f64 {
        self.start + i as f64 * self.sample_period
    }
}

/// Regularly sampled values, used for slope series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    pub sample_period: f64,
    pub start: f64,
}

impl Series {
    pub fn time(&self, i: usize) -> f64 {
        self.start + i as f64 * self.sample_period
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub frequency: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbgSpectrum {
    pub grating_index: usize,
    pub position: f64,
    pub wavelengths: Vec<f64>,
    pub powers: Vec<f64>,
    pub bragg_estimate: f64,
}

pub fn to_db(power: f64) -> f64 {
    10.0 * power.max(f64::MIN_POSITIVE).log10()
}

fn cell_power(x: Complex32, y: Complex32) -> f64 {
    x.norm_sqr() as f64 + y.norm_sqr() as f64
}

/// Running mean of per-cell power over profiles of one geometry.
#[derive(Debug, Clone)]
pub struct PowerAccumulator {
    sum: Vec<f64>,
    rows: usize,
    position_step: f64,
    origin: f64,
}

impl PowerAccumulator {
    pub fn new(first: &CompressedProfile) -> Self {
        PowerAccumulator {
            sum: vec![0.0; first.len()],
            rows: 0,
            position_step: first.position_step,
            origin: first.origin,
        }
    }

    pub fn add(&mut self, p: &CompressedProfile) -> Result<()> {
        if p.len() != self.sum.len() {
            return Err(Error::GeometryMismatch(format!(
                "profile of {} cells added to a {}-cell accumulator",
                p.len(),
                self.sum.len()
            )));
        }
        for ((s, x), y) in self.sum.iter_mut().zip(&p.x).zip(&p.y) {
            *s += cell_power(*x, *y);
        }
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn position_step(&self) -> f64 {
        self.position_step
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn mean_linear(&self) -> Vec<f64> {
        let n = self.rows.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    pub fn mean_db(&self) -> Vec<f64> {
        self.mean_linear().into_iter().map(to_db).collect()
    }
}

/// Time-averaged power per position, dB, summed over polarizations.
pub fn mean_power_trace(w: &Waterfall) -> Result<Vec<f64>> {
    let first = w
        .rows
        .first()
        .ok_or_else(|| Error::InvalidInput("waterfall has no rows".into()))?;
    let mut acc = PowerAccumulator::new(first);
    for r in &w.rows {
        acc.add(r)?;
    }
    Ok(acc.mean_db())
}

/// `| |w[t+1]| − |w[t]| |` per position, where `|·|` is the field magnitude
/// over both polarizations.
pub fn amplitude_change_map(w: &Waterfall) -> Result<Vec<Vec<f32>>> {
    if w.rows.len() < 2 {
        return Err(Error::InvalidInput(
            "change map needs at least two rows".into(),
        ));
    }
    let amplitude = |p: &CompressedProfile| -> Vec<f32> {
        p.x.iter()
            .zip(&p.y)
            .map(|(x, y)| (x.norm_sqr() + y.norm_sqr()).sqrt())
            .collect()
    };
    let mut prev = amplitude(&w.rows[0]);
    let mut out = Vec::with_capacity(w.rows.len() - 1);
    for r in &w.rows[1..] {
        let cur = amplitude(r);
        out.push(cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).collect());
        prev = cur;
    }
    Ok(out)
}

/// Time-mean of each column of a change map.
pub fn change_map_mean(map: &[Vec<f32>]) -> Vec<f64> {
    let Some(first) = map.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0f64; first.len()];
    for row in map {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    let n = map.len() as f64;
    acc.iter().map(|a| a / n).collect()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Median of `values` over a centered window of `2·half + 1` samples,
/// shrunk at the edges.
pub fn running_median(values: &[f64], half: usize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(2 * half + 1);
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            buf.clear();
            buf.extend_from_slice(&values[lo..hi]);
            median(&mut buf)
        })
        .collect()
}

/// Gauges for differential-phase sensing from a mean power trace (dB).
///
/// With `min_margin_db == 0` every cell qualifies and the result is a regular
/// grid of back-to-back gauges. Otherwise the qualifying cells are local
/// maxima that stand `min_margin_db` above the running median of the trace
/// over ±5 gauge lengths; each is paired with the point one gauge length
/// downstream (upstream when that would leave the trace).
pub fn select_gauges(
    power_db: &[f64],
    position_step: f64,
    origin: f64,
    min_margin_db: f64,
    gauge_length: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(gauge_length >= position_step) || !(position_step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "gauge length {gauge_length} m is shorter than the sample spacing {position_step} m"
        )));
    }
    let n = power_db.len();
    let cells = (gauge_length / position_step).round() as usize;
    let pos = |i: usize| origin + i as f64 * position_step;
    if min_margin_db <= 0.0 {
        let gauges: Vec<_> = (0..)
            .map(|k| k * cells)
            .take_while(|&i| i + cells < n)
            .map(|i| (pos(i), pos(i + cells)))
            .collect();
        if gauges.is_empty() {
            return Err(Error::Detection(format!(
                "trace of {n} cells is shorter than one gauge"
            )));
        }
        return Ok(gauges);
    }
    let floor = running_median(power_db, 5 * cells);
    let mut gauges = Vec::new();
    for i in 0..n {
        let left = if i > 0 { power_db[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < n { power_db[i + 1] } else { f64::NEG_INFINITY };
        let peak = power_db[i] > left && power_db[i] >= right;
        if peak && power_db[i] >= floor[i] + min_margin_db {
            if i + cells < n {
                gauges.push((pos(i), pos(i + cells)));
            } else if i >= cells {
                gauges.push((pos(i - cells), pos(i)));
            }
        }
    }
    if gauges.is_empty() {
        return Err(Error::Detection(format!(
            "no cell stands {min_margin_db} dB above the Rayleigh median"
        )));
    }
    Ok(gauges)
}

/// Wraps an angle into (−π, π].
pub fn wrap(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Adds multiples of 2π so consecutive differences lie in (−π, π].
pub fn unwrap(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &v in series {
        if let Some(p) = prev {
            let d = v - p;
            // Whole turns only, so smooth input passes through bit-exact.
            offset -= ((d - wrap(d)) / TAU).round() * TAU;
        }
        out.push(v + offset);
        prev = Some(v);
    }
    out
}

/// Index of the strongest cell of `power` in `lo..=hi` (clamped).
pub fn strongest_cell(power: &[f64], lo: usize, hi: usize) -> usize {
    let hi = hi.min(power.len().saturating_sub(1));
    let lo = lo.min(hi);
    (lo..=hi)
        .max_by(|&a, &b| power[a].total_cmp(&power[b]))
        .unwrap_or(lo)
}

/// Time series of one cell, both polarizations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellSeries {
    pub x: Vec<Complex32>,
    pub y: Vec<Complex32>,
}

impl CellSeries {
    pub fn from_waterfall(w: &Waterfall, cell: usize) -> Self {
        CellSeries {
            x: w.rows.iter().map(|r| r.x[cell]).collect(),
            y: w.rows.iter().map(|r| r.y[cell]).collect(),
        }
    }

    pub fn push(&mut self, p: &CompressedProfile, cell: usize) {
        self.x.push(p.x[cell]);
        self.y.push(p.y[cell]);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The polarization with the higher mean power.
    fn dominant(&self) -> &[Complex32] {
        let px: f64 = self.x.iter().map(|v| v.norm_sqr() as f64).sum();
        let py: f64 = self.y.iter().map(|v| v.norm_sqr() as f64).sum();
        if px >= py {
            &self.x
        } else {
            &self.y
        }
    }
}

/// Differential phase of two cell series. The sign is chosen so that an
/// increase of optical path between the first and second cell gives a
/// positive phase change.
pub fn phase_between(
    first: &CellSeries,
    second: &CellSeries,
    sample_period: f64,
    gauge: (f64, f64),
) -> Result<PhaseSeries> {
    if first.len() != second.len() {
        return Err(Error::InvalidInput(format!(
            "cell series of {} and {} rows",
            first.len(),
            second.len()
        )));
    }
    let (a, b) = (first.dominant(), second.dominant());
    let n = a.len();
    let threshold = 10f64.powf(LOW_CONFIDENCE_DB / 10.0);
    let mean = |s: &[Complex32]| s.iter().map(|v| v.norm_sqr() as f64).sum::<f64>() / n.max(1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let low: Vec<bool> = a
        .iter()
        .zip(b)
        .map(|(u, v)| {
            (u.norm_sqr() as f64) < threshold * ma || (v.norm_sqr() as f64) < threshold * mb
        })
        .collect();
    let wrapped: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(u, v)| {
            let p = Complex64::new(u.re as f64, u.im as f64)
                * Complex64::new(v.re as f64, -v.im as f64);
            p.arg()
        })
        .collect();

    // Unwrap across the reliable samples only, then fill the gaps.
    let good: Vec<usize> = (0..n).filter(|&i| !low[i]).collect();
    let mut values = vec![0.0; n];
    if good.is_empty() {
        values.copy_from_slice(&wrapped);
    } else {
        let kept: Vec<f64> = good.iter().map(|&i| wrapped[i]).collect();
        let unwrapped = unwrap(&kept);
        for (&i, &v) in good.iter().zip(&unwrapped) {
            values[i] = v;
        }
        interpolate_gaps(&mut values, &good);
    }
    Ok(PhaseSeries {
        values,
        sample_period,
        gauge,
        low_confidence: low,
    })
}

/// Linear interpolation between the samples at `known` (sorted); constant
/// extrapolation at the ends.
fn interpolate_gaps(values: &mut [f64], known: &[usize]) {
    let n = values.len();
    let first = known[0];
    let last = *known.last().unwrap();
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..n {
        values[i] = values[last];
    }
    for w in known.windows(2) {
        let (i0, i1) = (w[0], w[1]);
        if i1 > i0 + 1 {
            let (v0, v1) = (values[i0], values[i1]);
            for i in i0 + 1..i1 {
                let f = (i - i0) as f64 / (i1 - i0) as f64;
                values[i] = v0 + f * (v1 - v0);
            }
        }
    }
}

/// Phase change between positions `z1 < z2` over the rows of a waterfall.
pub fn differential_phase(w: &Waterfall, z1: f64, z2: f64) -> Result<PhaseSeries> {
    if w.rows.is_empty() {
        return Err(Error::InvalidInput("waterfall has no rows".into()));
    }
    let (lo, hi) = w.span();
    let tol = 1e-9 * hi.abs().max(1.0);
    if !(z1 < z2) || z1 < lo - tol || z2 > hi + tol {
        return Err(Error::InvalidInput(format!(
            "gauge [{z1}, {z2}] m must be ordered and inside [{lo}, {hi}] m"
        )));
    }
    let a = CellSeries::from_waterfall(w, w.index_of(z1));
    let b = CellSeries::from_waterfall(w, w.index_of(z2));
    phase_between(&a, &b, w.row_period, (z1, z2))
}

/// Removes the least-squares line.
pub fn detrend(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let tm = (n - 1) as f64 / 2.0;
    let ym = values.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let dt = i as f64 - tm;
        sxy += dt * (v - ym);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| v - ym - slope * (i as f64 - tm))
        .collect()
}

/// Subtracts a centered moving average of `2·half + 1` samples, which
/// removes drifts much slower than the window.
pub fn high_pass(values: &[f64], half: usize) -> Vec<f64> {
    moving_average(values, half)
        .iter()
        .zip(values)
        .map(|(m, v)| v - m)
        .collect()
}

/// Centered moving average, window shrunk symmetrically at the edges.
pub fn moving_average(values: &[f64], half: usize) -> Vec<f64> {
    let n = values.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            (prefix[i + h + 1] - prefix[i - h]) / (2 * h + 1) as f64
        })
        .collect()
}

/// One-sided power spectrum of the detrended, Hann-windowed series, bins
/// `0..=N/2`.
pub fn power_spectrum(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let x = detrend(values);
    let mut buf: Vec<Complex64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos();
            Complex64::new(v * w, 0.0)
        })
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Offset of the vertex of the parabola through three equally spaced
/// samples, relative to the middle one, in (−0.5, 0.5) for a true maximum.
pub fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let den = left - 2.0 * mid + right;
    if den >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / den).clamp(-0.5, 0.5)
}

/// Strongest spectral line of a phase series. `Ok(None)` when no bin stands
/// 6 dB above the spectral median.
pub fn detect_tone(p: &PhaseSeries) -> Result<Option<Tone>> {
    if p.len() < 64 {
        return Err(Error::InvalidInput(format!(
            "tone detection needs ≥ 64 samples, got {}",
            p.len()
        )));
    }
    if !(p.sample_period > 0.0) {
        return Err(Error::InvalidInput("sample period must be > 0".into()));
    }
    let spec = power_spectrum(&p.values);
    let n = p.len();
    let mut rest: Vec<f64> = spec[1..].to_vec();
    let floor = median(&mut rest);
    let (k, &peak) = spec
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("spectrum has at least two bins");
    if !(peak > 0.0) || peak < TONE_THRESHOLD * floor {
        return Ok(None);
    }
    let offset = if k + 1 < spec.len() {
        let l = spec[k - 1].max(f64::MIN_POSITIVE).ln();
        let m = peak.ln();
        let r = spec[k + 1].max(f64::MIN_POSITIVE).ln();
        parabolic_offset(l, m, r)
    } else {
        0.0
    };
    Ok(Some(Tone {
        frequency: (k as f64 + offset) / (n as f64 * p.sample_period),
        power: peak,
    }))
}

/// Spectral power at `frequency` (strongest of the nearest bin and its
/// neighbors) and the spectral median.
fn line_power(values: &[f64], sample_period: f64, frequency: f64) -> (f64, f64) {
    let spec = power_spectrum(values);
    let n = values.len();
    let k = (frequency * n as f64 * sample_period).round() as usize;
    let lo = k.saturating_sub(1).max(1);
    let hi = (k + 1).min(spec.len() - 1);
    let line = spec[lo..=hi].iter().cloned().fold(0.0, f64::max);
    let mut rest = spec[1..].to_vec();
    (line, median(&mut rest))
}

/// Gauge power of a tone, scanned along the fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeScan {
    pub centers: Vec<f64>,
    pub powers: Vec<f64>,
}

/// Scans gauges of length `gauge_length` stepped by half a gauge and returns
/// the tone power at `frequency` in each. Each endpoint is moved outward to
/// the strongest cell within a quarter gauge so faded cells are avoided.
pub fn scan_tone(w: &Waterfall, frequency: f64, gauge_length: f64) -> Result<GaugeScan> {
    if w.rows.len() < 64 {
        return Err(Error::InvalidInput(format!(
            "tone scan needs ≥ 64 rows, got {}",
            w.rows.len()
        )));
    }
    if !(frequency > 0.0 && frequency < 0.5 / w.row_period) {
        return Err(Error::InvalidInput(format!(
            "frequency {frequency} Hz is outside (0, {}) Hz",
            0.5 / w.row_period
        )));
    }
    let cells = (gauge_length / w.position_step()).round() as usize;
    if cells < 2 {
        return Err(Error::InvalidInput(format!(
            "gauge length {gauge_length} m spans fewer than two cells"
        )));
    }
    let n = w.n_cells();
    let power: Vec<f64> = {
        let mut acc = PowerAccumulator::new(&w.rows[0]);
        for r in &w.rows {
            acc.add(r)?;
        }
        acc.mean_linear()
    };
    let half = cells / 2;
    let quarter = (cells / 4).max(1);
    let starts: Vec<usize> = (0..).map(|k| k * half).take_while(|&s| s + cells < n).collect();
    let results: Vec<Result<(f64, f64, f64)>> = starts
        .par_iter()
        .map(|&s| {
            let i1 = strongest_cell(&power, s.saturating_sub(quarter), s);
            let i2 = strongest_cell(&power, s + cells, s + cells + quarter);
            let a = CellSeries::from_waterfall(w, i1);
            let b = CellSeries::from_waterfall(w, i2);
            let p = phase_between(&a, &b, w.row_period, (w.position(i1), w.position(i2)))?;
            let (line, floor) = line_power(&p.values, p.sample_period, frequency);
            Ok((w.position(s + half), line, floor))
        })
        .collect();
    let mut scan = GaugeScan {
        centers: Vec::with_capacity(results.len()),
        powers: Vec::with_capacity(results.len()),
    };
    for r in results {
        let (c, line, floor) = r?;
        scan.centers.push(c);
        // A gauge whose line does not clear its own noise floor counts as silent.
        scan.powers.push(if line >= TONE_THRESHOLD * floor { line } else { 0.0 });
    }
    Ok(scan)
}

/// Center of the gauge with the strongest tone at `frequency`.
pub fn localize_tone(w: &Waterfall, frequency: f64, gauge_length: f64) -> Result<f64> {
    let scan = scan_tone(w, frequency, gauge_length)?;
    localize_in_scan(&scan, frequency)
}

/// Picks the strongest gauge of a scan; it must stand 6 dB above the median
/// gauge.
pub fn localize_in_scan(scan: &GaugeScan, frequency: f64) -> Result<f64> {
    let (i, &best) = scan
        .powers
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Detection("no gauge fits in the waterfall".into()))?;
    let mut all = scan.powers.clone();
    let floor = median(&mut all);
    if !(best > 0.0) || best < TONE_THRESHOLD * floor {
        return Err(Error::Detection(format!(
            "no gauge carries a {frequency} Hz tone above the detection threshold"
        )));
    }
    Ok(scan.centers[i])
}

/// Phase per unit strain and gauge length: `q·2π·n_g·ξ/λ`.
fn phase_per_strain_metre(constants: &SensingConstants, wavelength: f64, group_index: f64) -> f64 {
    constants.convention.factor() * TAU * group_index * constants.strain_optic_factor / wavelength
}

/// Strain that produces a phase change `dphi` across a gauge.
pub fn phase_to_strain(
    dphi: f64,
    gauge: f64,
    constants: &SensingConstants,
    wavelength: f64,
    group_index: f64,
) -> Result<f64> {
    if !(gauge > 0.0) {
        return Err(Error::InvalidInput(format!("gauge length {gauge} m must be > 0")));
    }
    Ok(dphi / (phase_per_strain_metre(constants, wavelength, group_index) * gauge))
}

/// Inverse of [`phase_to_strain`].
pub fn strain_to_phase(
    strain: f64,
    gauge: f64,
    constants: &SensingConstants,
    wavelength: f64,
    group_index: f64,
) -> f64 {
    strain * gauge * phase_per_strain_metre(constants, wavelength, group_index)
}

/// Least-squares slope of the phase over consecutive non-overlapping windows
/// of `window` seconds, rad/s. A trailing partial window is dropped.
pub fn phase_slope(p: &PhaseSeries, window: f64) -> Result<Series> {
    let dt = p.sample_period;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("sample period must be > 0".into()));
    }
    let m = (window / dt).round() as usize;
    if m < 10 {
        return Err(Error::InvalidInput(format!(
            "slope window {window} s holds fewer than 10 samples"
        )));
    }
    let values = p
        .values
        .chunks_exact(m)
        .map(|c| {
            let tm = (m - 1) as f64 / 2.0;
            let ym = c.iter().sum::<f64>() / m as f64;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (i, &v) in c.iter().enumerate() {
                let d = i as f64 - tm;
                sxy += d * (v - ym);
                sxx += d * d;
            }
            sxy / sxx / dt
        })
        .collect();
    Ok(Series {
        values,
        sample_period: m as f64 * dt,
        start: 0.5 * (m - 1) as f64 * dt,
    })
}

/// Temperature rate per phase slope: `λ / (q·2π·L·dn/dT)`.
pub fn kelvin_per_radian(
    span_length: f64,
    wavelength: f64,
    dn_dt: f64,
    convention: PhaseConvention,
) -> f64 {
    wavelength / (convention.factor() * TAU * span_length * dn_dt)
}

/// Core temperature from windowed phase slopes: each slope is turned into a
/// heating rate and integrated (trapezoidal, from `start_temperature` at
/// time zero) to the window centers.
pub fn core_temperature_series(
    slopes: &Series,
    span_length: f64,
    wavelength: f64,
    dn_dt: f64,
    convention: PhaseConvention,
    start_temperature: f64,
) -> Result<TemperatureSeries> {
    if !(span_length > 0.0) || !(dn_dt > 0.0) || !(wavelength > 0.0) {
        return Err(Error::InvalidInput(
            "span length, wavelength and dn/dT must be > 0".into(),
        ));
    }
    let k = kelvin_per_radian(span_length, wavelength, dn_dt, convention);
    let rates: Vec<f64> = slopes.values.iter().map(|s| s * k).collect();
    let dt = slopes.sample_period;
    let mut values = Vec::with_capacity(rates.len());
    let mut t = start_temperature;
    for (i, &r) in rates.iter().enumerate() {
        if i == 0 {
            t += r * slopes.start;
        } else {
            t += 0.5 * (rates[i - 1] + r) * dt;
        }
        values.push(t);
    }
    Ok(TemperatureSeries {
        values,
        sample_period: dt,
        start: slopes.start,
        kind: TemperatureKind::Core,
    })
}

/// Undoes a first-order lag: `x = y + τ·dy/dt`, with `y` smoothed by a
/// centered moving average of `smoothing` samples and differentiated by
/// central differences (one-sided at the ends).
pub fn inverse_filter_chamber(
    core: &TemperatureSeries,
    tau: f64,
    smoothing: usize,
) -> Result<TemperatureSeries> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("time constant {tau} s must be > 0")));
    }
    let dt = core.sample_period;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("sample period must be > 0".into()));
    }
    let y = moving_average(&core.values, smoothing.max(1) / 2);
    let n = y.len();
    let values = (0..n)
        .map(|i| {
            let d = if n < 2 {
                0.0
            } else if i == 0 {
                (y[1] - y[0]) / dt
            } else if i == n - 1 {
                (y[n - 1] - y[n - 2]) / dt
            } else {
                (y[i + 1] - y[i - 1]) / (2.0 * dt)
            };
            y[i] + tau * d
        })
        .collect();
    Ok(TemperatureSeries {
        values,
        sample_period: dt,
        start: core.start,
        kind: TemperatureKind::ChamberEstimate,
    })
}

/// Root-mean-square difference of two equal-length slices.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return f64::NAN;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Per-grating reflection spectra from a wavelength sweep. `sweep` holds one
/// profile per probe wavelength (ascending); the grating power is the
/// strongest cell within half a resolution cell of its position.
pub fn fbg_spectra(
    sweep: &[(f64, CompressedProfile)],
    grating_positions: &[f64],
    resolution: f64,
) -> Result<Vec<FbgSpectrum>> {
    if sweep.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "spectra need ≥ 3 wavelengths, got {}",
            sweep.len()
        )));
    }
    if sweep.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Ordering("sweep wavelengths must ascend".into()));
    }
    let first = &sweep[0].1;
    if sweep.iter().any(|(_, p)| !p.same_geometry(first)) {
        return Err(Error::GeometryMismatch(
            "sweep profiles must share their geometry".into(),
        ));
    }
    if let Some(w) = grating_positions
        .windows(2)
        .find(|w| (w[1] - w[0]).abs() < resolution)
    {
        return Err(Error::InvalidInput(format!(
            "gratings at {} m and {} m are closer than the {resolution} m resolution",
            w[0], w[1]
        )));
    }
    let half = ((0.5 * resolution / first.position_step).floor() as usize).max(0);
    let wavelengths: Vec<f64> = sweep.iter().map(|(l, _)| *l).collect();
    let powers: Vec<Vec<f64>> = sweep.iter().map(|(_, p)| p.power()).collect();
    grating_positions
        .iter()
        .enumerate()
        .map(|(g, &z)| {
            if z < first.origin || z > first.end() {
                return Err(Error::InvalidInput(format!(
                    "grating at {z} m is outside the profile"
                )));
            }
            let c = first.index_of(z);
            let (lo, hi) = (c.saturating_sub(half), c + half);
            let spectrum: Vec<f64> = powers
                .iter()
                .map(|p| {
                    let i = strongest_cell(p, lo, hi);
                    p[i]
                })
                .collect();
            let bragg_estimate = spectral_peak(&wavelengths, &spectrum);
            Ok(FbgSpectrum {
                grating_index: g,
                position: z,
                wavelengths: wavelengths.clone(),
                powers: spectrum,
                bragg_estimate,
            })
        })
        .collect()
}

/// Wavelength of the spectral maximum, refined by a parabola through the
/// log powers of the maximum and its neighbors (exact for a Gaussian line on
/// a uniform grid).
pub fn spectral_peak(wavelengths: &[f64], powers: &[f64]) -> f64 {
    let k = (0..powers.len())
        .max_by(|&a, &b| powers[a].total_cmp(&powers[b]))
        .unwrap_or(0);
    if k == 0 || k + 1 >= powers.len() {
        return wavelengths[k];
    }
    let ln = |v: f64| v.max(f64::MIN_POSITIVE).ln();
    let off = parabolic_offset(ln(powers[k - 1]), ln(powers[k]), ln(powers[k + 1]));
    let step = if off >= 0.0 {
        wavelengths[k + 1] - wavelengths[k]
    } else {
        wavelengths[k] - wavelengths[k - 1]
    };
    wavelengths[k] + off * step
}

/// Dominant period, in gratings, of the Bragg-wavelength sequence. `Ok(None)`
/// when the spectrum has no line 6 dB above its median.
pub fn bragg_periodicity(bragg_estimates: &[f64]) -> Result<Option<f64>> {
    let n = bragg_estimates.len();
    if n < 8 {
        return Err(Error::InvalidInput(format!(
            "periodicity needs ≥ 8 gratings, got {n}"
        )));
    }
    let mean = bragg_estimates.iter().sum::<f64>() / n as f64;
    let scale = bragg_estimates
        .iter()
        .map(|v| (v - mean).abs())
        .fold(0.0, f64::max);
    if !(scale > 1e-12 * mean.abs()) {
        return Ok(None);
    }
    // Zero padding refines the grid; the parabola refines it further.
    let len = (16 * n).next_power_of_two();
    let mut buf = vec![Complex64::default(); len];
    for (i, v) in bragg_estimates.iter().enumerate() {
        let w = 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos();
        buf[i] = Complex64::new((v - mean) / scale * w, 0.0);
    }
    FftPlanner::<f64>::new().plan_fft_forward(len).process(&mut buf);
    let spec: Vec<f64> = buf[..=len / 2].iter().map(|c| c.norm_sqr()).collect();
    // Periods longer than a third of the record are not resolvable.
    let k_min = (3 * len).div_ceil(n).max(1);
    if k_min + 1 >= spec.len() {
        return Ok(None);
    }
    let (k, &peak) = spec
        .iter()
        .enumerate()
        .skip(k_min)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let mut rest = spec[1..].to_vec();
    let floor = median(&mut rest);
    if !(peak > TONE_THRESHOLD * floor) || peak < 1e-12 {
        return Ok(None);
    }
    let off = if k + 1 < spec.len() {
        parabolic_offset(spec[k - 1].ln(), peak.ln(), spec[k + 1].ln())
    } else {
        0.0
    };
    Ok(Some(len as f64 / (k as f64 + off)))
}

/// Indices of local maxima of `trace` that reach `min_value`. Plateaus count
/// once, at their first sample.
pub fn find_peaks(trace: &[f64], min_value: f64) -> Vec<usize> {
    let n = trace.len();
    (0..n)
        .filter(|&i| {
            let v = trace[i];
            v >= min_value
                && (i == 0 || trace[i - 1] < v)
                && (i + 1 == n || trace[i + 1] <= v)
        })
        .collect()
}

/// Whether the two strongest maxima of a power trace (dB) near `z1` and `z2`
/// are distinct peaks separated by a dip at least `dip_db` below the weaker.
pub fn resolves_two_points(
    trace_db: &[f64],
    position_step: f64,
    origin: f64,
    z1: f64,
    z2: f64,
    dip_db: f64,
) -> bool {
    let idx = |z: f64| ((z - origin) / position_step).round().max(0.0) as usize;
    let (i1, i2) = (idx(z1.min(z2)), idx(z1.max(z2)));
    if i2 >= trace_db.len() {
        return false;
    }
    let reach = ((i2 - i1) / 2).max(1);
    let p1 = strongest_cell(trace_db, i1.saturating_sub(reach), i1 + reach / 2);
    let p2 = strongest_cell(trace_db, i2.saturating_sub(reach / 2), i2 + reach);
    if p2 <= p1 + 1 {
        return false;
    }
    let dip = trace_db[p1 + 1..p2]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    dip <= trace_db[p1].min(trace_db[p2]) - dip_db
}

/// Least-squares line `a + b·x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len().min(y.len()) as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - xm) * (b - ym);
        sxx += (a - xm) * (a - xm);
    }
    let b = sxy / sxx;
    (ym - b * xm, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::stack_waterfall;

    fn series(values: Vec<f64>, dt: f64) -> PhaseSeries {
        let n = values.len();
        PhaseSeries {
            values,
            sample_period: dt,
            gauge: (0.0, 1.0),
            low_confidence: vec![false; n],
        }
    }

    fn row(x: Vec<Complex32>, t: f64) -> CompressedProfile {
        let n = x.len();
        CompressedProfile {
            x,
            y: vec![Complex32::default(); n],
            position_step: 0.05,
            origin: 0.0,
            timestamp: t,
        }
    }

    #[test]
    fn unwrap_examples() {
        let u = unwrap(&[0.0, 3.0, -0.2832]);
        assert!((u[2] - 6.0).abs() < 1e-3, "{u:?}");
        let smooth = [0.0, 0.5, 1.0, 0.2, -0.7];
        assert_eq!(unwrap(&smooth), smooth.to_vec());
        assert!(unwrap(&[]).is_empty());
    }

    #[test]
    fn wrap_range() {
        for x in [-10.0, -PI, 0.0, PI, 3.5, 100.0] {
            let w = wrap(x);
            assert!(w > -PI && w <= PI, "{x} → {w}");
            assert!(((x - w) / TAU - ((x - w) / TAU).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn power_trace_one_row() {
        let p = row(vec![Complex32::new(1.0, 0.0), Complex32::new(0.0, 0.1)], 0.0);
        let w = stack_waterfall(vec![p.clone()]).unwrap();
        let t = mean_power_trace(&w).unwrap();
        assert!((t[0] - 0.0).abs() < 1e-9);
        assert!((t[1] + 20.0).abs() < 1e-5);
    }

    #[test]
    fn change_map_of_static_rows_is_zero() {
        let x: Vec<_> = (0..5).map(|i| Complex32::new(i as f32, 1.0)).collect();
        let rows = (0..4).map(|i| row(x.clone(), i as f64)).collect();
        let w = stack_waterfall(rows).unwrap();
        let m = amplitude_change_map(&w).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.iter().flatten().all(|&v| v == 0.0));
        let single = stack_waterfall(vec![row(x, 0.0)]).unwrap();
        assert!(amplitude_change_map(&single).is_err());
    }

    #[test]
    fn gauge_grid() {
        let trace = vec![-70.0; 2000];
        let g = select_gauges(&trace, 0.05, 0.0, 0.0, 4.0).unwrap();
        assert!((g[0].1 - g[0].0 - 4.0).abs() < 1e-9);
        assert!((g[1].0 - 4.0).abs() < 1e-9);
        assert_eq!(g.len(), 24);
        assert!(select_gauges(&trace, 0.05, 0.0, 20.0, 4.0).is_err());
        assert!(select_gauges(&trace, 0.05, 0.0, 0.0, 0.01).is_err());

        let mut peaky = trace.clone();
        peaky[160] = -40.0;
        peaky[1990] = -30.0;
        let g = select_gauges(&peaky, 0.05, 0.0, 20.0, 4.0).unwrap();
        assert_eq!(g.len(), 2);
        assert!((g[0].0 - 8.0).abs() < 1e-9 && (g[0].1 - 12.0).abs() < 1e-9);
        assert!((g[1].1 - 99.5).abs() < 1e-9);
    }

    #[test]
    fn static_phase_is_constant_and_upstream_sign() {
        let z = |a: f64| Complex32::from_polar(1.0, a as f32);
        let rows: Vec<_> = (0..100)
            .map(|i| {
                // The downstream cell sees a growing negative phase, which is
                // how a lengthening path shows up in the received field.
                let d = -0.1 * i as f64;
                row(vec![z(0.3), z(1.0), z(1.0 + d)], i as f64 * 1e-3)
            })
            .collect();
        let w = stack_waterfall(rows).unwrap();
        let p = differential_phase(&w, 0.0, 0.05).unwrap();
        assert!(p.values.iter().all(|v| (v - p.values[0]).abs() < 1e-6));
        let q = differential_phase(&w, 0.0, 0.1).unwrap();
        let slope = (q.values[99] - q.values[0]) / 99.0;
        assert!((slope - 0.1).abs() < 1e-5, "{slope}");
        assert!(differential_phase(&w, 0.1, 0.0).is_err());
        assert!(differential_phase(&w, 0.0, 1.0).is_err());
    }

    #[test]
    fn faded_samples_are_interpolated() {
        let mut a = CellSeries::default();
        let mut b = CellSeries::default();
        for i in 0..50 {
            let phi = 0.2 * i as f64;
            a.x.push(Complex32::new(1.0, 0.0));
            a.y.push(Complex32::default());
            let amp = if i == 20 || i == 21 { 1e-4 } else { 1.0 };
            // Garbage phase where the cell is faded.
            let ph = if amp < 1.0 { 2.5 } else { -phi };
            b.x.push(Complex32::from_polar(amp, ph as f32));
            b.y.push(Complex32::default());
        }
        let p = phase_between(&a, &b, 1e-3, (0.0, 1.0)).unwrap();
        assert_eq!(p.low_confidence_count(), 2);
        for (i, v) in p.values.iter().enumerate() {
            assert!((v - p.values[0] - 0.2 * i as f64).abs() < 1e-5, "{i}: {v}");
        }
    }

    #[test]
    fn tone_detection() {
        let dt = 1e-3;
        let v: Vec<f64> = (0..1000)
            .map(|i| 0.3 * (TAU * 120.3 * i as f64 * dt).sin() + 0.01 * i as f64)
            .collect();
        let t = detect_tone(&series(v, dt)).unwrap().unwrap();
        assert!((t.frequency - 120.3).abs() < 0.1, "{}", t.frequency);
        assert!(detect_tone(&series(vec![1.0; 1000], dt)).unwrap().is_none());
        assert!(detect_tone(&series(vec![1.0; 10], dt)).is_err());
    }

    #[test]
    fn strain_constant() {
        let c = SensingConstants::default();
        let s = phase_to_strain(4.70, 1.0, &c, 1550e-9, 1.468).unwrap();
        assert!((s - 1e-6).abs() < 0.01e-6, "{s}");
        assert!((strain_to_phase(1e-6, 1.0, &c, 1550e-9, 1.468) - 4.701).abs() < 1e-3);
        assert_eq!(phase_to_strain(0.0, 1.0, &c, 1550e-9, 1.468).unwrap(), 0.0);
        let s2 = phase_to_strain(9.40, 2.0, &c, 1550e-9, 1.468).unwrap();
        assert!((s2 - s).abs() < 1e-15);
        let d = SensingConstants {
            convention: PhaseConvention::DoublePass,
            ..c
        };
        let sd = phase_to_strain(4.70, 1.0, &d, 1550e-9, 1.468).unwrap();
        assert!((sd - s / 2.0).abs() < 1e-15);
        assert!(phase_to_strain(1.0, 0.0, &c, 1550e-9, 1.468).is_err());
    }

    #[test]
    fn slopes() {
        let dt = 1e-3;
        let line: Vec<f64> = (0..27000).map(|i| 2.0 + 5.0 * i as f64 * dt).collect();
        let s = phase_slope(&series(line.clone(), dt), 2.7).unwrap();
        assert_eq!(s.values.len(), 10);
        assert!(s.values.iter().all(|v| (v - 5.0).abs() < 1e-9));
        let toned: Vec<f64> = line
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.5 * (TAU * 400.0 * i as f64 * dt).sin())
            .collect();
        let s = phase_slope(&series(toned, dt), 2.7).unwrap();
        assert!(s.values.iter().all(|v| (v - 5.0).abs() < 0.1));
        let flat = phase_slope(&series(vec![1.0; 5000], dt), 2.7).unwrap();
        assert!(flat.values.iter().all(|v| v.abs() < 1e-12));
        assert!(phase_slope(&series(vec![1.0; 100], dt), 0.005).is_err());
    }

    #[test]
    fn temperature_rate() {
        let slopes = Series {
            values: vec![1000.0; 4],
            sample_period: 2.7,
            start: 1.35,
        };
        let t = core_temperature_series(&slopes, 195.0, 1.55e-6, 1e-5, PhaseConvention::SinglePass, 30.0)
            .unwrap();
        let rate = (t.values[3] - t.values[2]) / 2.7;
        // 1000·1.55e-6/(2π·195·1e-5)
        assert!((rate - 0.12651).abs() < 1e-4, "{rate}");
        let zero = Series {
            values: vec![0.0; 4],
            ..slopes
        };
        let t = core_temperature_series(&zero, 195.0, 1.55e-6, 1e-5, PhaseConvention::SinglePass, 30.0)
            .unwrap();
        assert!(t.values.iter().all(|&v| v == 30.0));
    }

    #[test]
    fn inverse_filter_step_response() {
        let dt = 0.1;
        let tau = 5.0;
        let core = TemperatureSeries {
            values: (0..500).map(|i| 1.0 - (-(i as f64) * dt / tau).exp()).collect(),
            sample_period: dt,
            start: 0.0,
            kind: TemperatureKind::Core,
        };
        let x = inverse_filter_chamber(&core, tau, 1).unwrap();
        for v in &x.values[2..499] {
            assert!((v - 1.0).abs() < 0.01, "{v}");
        }
        let flat = TemperatureSeries {
            values: vec![30.0; 20],
            ..core
        };
        let x = inverse_filter_chamber(&flat, tau, 3).unwrap();
        assert!(x.values.iter().all(|&v| (v - 30.0).abs() < 1e-12));
    }

    #[test]
    fn gaussian_bragg_fit() {
        let sigma = 40e-12;
        let lb = 1550.013e-9;
        let wl: Vec<f64> = (0..21).map(|k| 1549.9e-9 + k as f64 * sigma / 2.0).collect();
        let pw: Vec<f64> = wl
            .iter()
            .map(|l| (-((l - lb) / sigma).powi(2)).exp())
            .collect();
        let est = spectral_peak(&wl, &pw);
        assert!((est - lb).abs() < sigma / 20.0);
        let on_grid = spectral_peak(&wl, &{
            let mut p = vec![0.1; 21];
            p[7] = 1.0;
            p
        });
        assert_eq!(on_grid, wl[7]);
    }

    #[test]
    fn periodicity() {
        for period in [10.0, 7.0] {
            let seq: Vec<f64> = (0..200)
                .map(|k| 1550e-9 + 30e-12 * (TAU * k as f64 / period).sin())
                .collect();
            let p = bragg_periodicity(&seq).unwrap().unwrap();
            assert!((p - period).abs() < 0.2, "{period}: {p}");
        }
        assert!(bragg_periodicity(&[1550e-9; 200]).unwrap().is_none());
    }

    #[test]
    fn peaks_and_resolution() {
        let tr = [0.0, 1.0, 0.0, -5.0, 0.0, 2.0, 2.0, 1.0];
        assert_eq!(find_peaks(&tr, 0.5), vec![1, 5]);
        let two = [-60.0, -30.0, -10.0, -30.0, -10.0, -30.0, -60.0];
        assert!(resolves_two_points(&two, 1.0, 0.0, 2.0, 4.0, 3.0));
        let one = [-60.0, -30.0, -10.0, -11.0, -10.5, -30.0, -60.0];
        assert!(!resolves_two_points(&one, 1.0, 0.0, 2.0, 4.0, 3.0));
    }

    #[test]
    fn moving_average_edges() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(moving_average(&v, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(moving_average(&v, 0), v.to_vec());
        let hp = high_pass(&[3.0; 10], 2);
        assert!(hp.iter().all(|v| v.abs() < 1e-12));
    }
}
