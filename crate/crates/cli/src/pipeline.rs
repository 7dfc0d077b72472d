//! End-to-end processing: shot generation, pulse compression, Golay pairing
//! and the per-scenario analyses.
//!
//! Shots are simulated and compressed in parallel chunks; combined rows reach
//! the analysis strictly in time order, so outputs do not depend on the
//! worker count.

use std::path::Path;

use ccotdr_core::dsp::{
    self, amplitude_change_map, bragg_periodicity, change_map_mean, core_temperature_series,
    detect_tone, fbg_spectra, find_peaks, high_pass, inverse_filter_chamber,
    localize_in_scan, phase_between, phase_slope, resolves_two_points, scan_tone, select_gauges,
    strongest_cell, CellSeries, PhaseSeries, PowerAccumulator, Tone,
};
use ccotdr_core::probe::Which;
use ccotdr_core::sim::Campaign;
use ccotdr_core::{
    compress_shot, golay_compress, roi_gate, stack_waterfall, CompressedProfile, Correlator,
    EnvironmentEvent, Error, FiberModel, Result, Shot, ShotSimulator,
};
use rayon::prelude::*;

use crate::report::{num, write_matrix_csv, write_summary, write_trace_csv, TextFile};
use crate::scenario::{Scenario, ScenarioKind};
use crate::trace::{RecordKind, TraceReader, TraceRecord, TraceWriter};

/// Pairs simulated per parallel batch.
const CHUNK_PAIRS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticResult {
    pub gauges: usize,
    /// Strongest tone over all gauges.
    pub tone: Option<Tone>,
    /// Center of the gauge carrying the tone, m.
    pub location: Option<f64>,
    /// Mean change inside the event spans over the mean change elsewhere.
    pub change_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalResult {
    pub gauge: (f64, f64),
    pub low_confidence: usize,
    pub tone: Option<Tone>,
    pub dn_dt_estimate: f64,
    /// Chamber estimate vs configured chamber temperature after `3τ`, K.
    pub chamber_rmse: f64,
    pub core_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbgResult {
    pub gratings: usize,
    /// Adjacent grating pairs whose peaks merge in the max-hold trace.
    pub unresolved_pairs: usize,
    pub max_bragg_error: f64,
    pub sweep_step: f64,
    pub periodicity: Option<f64>,
    pub peak_window: (f64, f64),
    pub peaks_in_window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Analysis {
    Acoustic(AcousticResult),
    Thermal(ThermalResult),
    Fbg(FbgResult),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub name: String,
    pub rows: usize,
    pub analysis: Analysis,
}

impl Summary {
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e = vec![
            ("name".to_string(), self.name.clone()),
            ("rows".to_string(), self.rows.to_string()),
        ];
        let mut put = |k: &str, v: String| e.push((k.to_string(), v));
        let opt = |v: Option<f64>| v.map_or("none".to_string(), num);
        match &self.analysis {
            Analysis::Acoustic(a) => {
                put("kind", "acoustic".into());
                put("gauges", a.gauges.to_string());
                put("tone_hz", opt(a.tone.map(|t| t.frequency)));
                put("tone_location_m", opt(a.location));
                put("change_ratio", num(a.change_ratio));
            }
            Analysis::Thermal(t) => {
                put("kind", "thermal".into());
                put("gauge_m", format!("{}, {}", num(t.gauge.0), num(t.gauge.1)));
                put("low_confidence_rows", t.low_confidence.to_string());
                put("tone_hz", opt(t.tone.map(|t| t.frequency)));
                put("dn_dt_estimate", num(t.dn_dt_estimate));
                put("chamber_rmse_k", num(t.chamber_rmse));
                put("core_rmse_k", num(t.core_rmse));
            }
            Analysis::Fbg(f) => {
                put("kind", "fbg".into());
                put("gratings", f.gratings.to_string());
                put("unresolved_pairs", f.unresolved_pairs.to_string());
                put("max_bragg_error_m", num(f.max_bragg_error));
                put("sweep_step_m", num(f.sweep_step));
                put("periodicity", opt(f.periodicity));
                put(
                    "peak_window_m",
                    format!("{}, {}", num(f.peak_window.0), num(f.peak_window.1)),
                );
                put("peaks_in_window", f.peaks_in_window.to_string());
            }
        }
        e
    }
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::config("--workers", "must be ≥ 1"));
        }
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))
}

/// Compression state shared by the staged and streaming paths.
pub struct Compressor {
    corr: [Correlator<f32>; 2],
    group_index: f64,
    fiber_length: f64,
}

impl Compressor {
    pub fn new(scn: &Scenario, sim: &ShotSimulator) -> Result<Self> {
        let corr = |w: Which| -> Result<Correlator<f32>> {
            let frame = sim
                .frame(w)
                .ok_or_else(|| Error::InvalidInput("simulator lacks a Golay frame".into()))?;
            Correlator::new(&frame.reference(), frame.len_samples())
        };
        Ok(Compressor {
            corr: [corr(Which::A)?, corr(Which::B)?],
            group_index: scn.fiber.group_index,
            fiber_length: scn.fiber.length,
        })
    }

    /// Compresses an A/B pair, combines it and keeps the fiber span.
    pub fn pair(&self, a: &Shot, b: &Shot) -> Result<CompressedProfile> {
        if a.which != Which::A || b.which != Which::B {
            return Err(Error::Ordering("shots must alternate A, B".into()));
        }
        let pa = compress_shot(a, &self.corr[0], self.group_index)?;
        let pb = compress_shot(b, &self.corr[1], self.group_index)?;
        let row = golay_compress(&pa, &pb)?;
        roi_gate(&row, (0.0, self.fiber_length), 1)
    }
}

/// Simulated shot source for every scenario kind.
struct ShotSource<'a> {
    scn: &'a Scenario,
    /// One simulator per wavelength; one wavelength outside sweeps.
    sims: Vec<ShotSimulator>,
}

impl<'a> ShotSource<'a> {
    fn new(scn: &'a Scenario) -> Result<Self> {
        scn.validate()?;
        let model = scn.build_model()?;
        let sims = match scn.kind {
            ScenarioKind::Fbg => scn
                .wavelengths()
                .par_iter()
                .map(|&l| scn.simulator(&model, l))
                .collect::<Result<Vec<_>>>()?,
            _ => vec![scn.simulator(&model, scn.fiber.wavelength)?],
        };
        Ok(ShotSource { scn, sims })
    }

    fn pairs(&self) -> usize {
        self.scn.row_count()
    }

    /// Shots `2k` and `2k + 1`. A sweep spends one pair per wavelength.
    fn pair(&self, k: usize) -> Result<(Shot, Shot)> {
        let sim = match self.scn.kind {
            ScenarioKind::Fbg => &self.sims[k],
            _ => &self.sims[0],
        };
        let shot = |i: usize| {
            sim.simulate(
                Campaign::which(i),
                self.scn.shot_time(i),
                self.scn.seed ^ i as u64,
            )
        };
        Ok((shot(2 * k)?, shot(2 * k + 1)?))
    }

    fn compressor(&self) -> Result<Compressor> {
        Compressor::new(self.scn, &self.sims[0])
    }
}

/// Consumer of combined rows in time order.
pub trait Sink: Send {
    fn push(&mut self, row: CompressedProfile) -> Result<()>;
    fn finish(self: Box<Self>, out_dir: &Path) -> Result<Analysis>;
}

pub fn make_sink(scn: &Scenario) -> Result<Box<dyn Sink>> {
    Ok(match scn.kind {
        ScenarioKind::Acoustic => Box::new(AcousticSink::new(scn)),
        ScenarioKind::Thermal => Box::new(ThermalSink::new(scn)?),
        ScenarioKind::Fbg => Box::new(FbgSink::new(scn)?),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn finish_summary(scn: &Scenario, rows: usize, sink: Box<dyn Sink>, out: &Path) -> Result<Summary> {
    let analysis = sink.finish(out)?;
    let summary = Summary {
        name: scn.name.clone(),
        rows,
        analysis,
    };
    write_summary(&out.join("summary.txt"), &summary.entries())?;
    Ok(summary)
}

/// Simulates, compresses and analyzes a scenario without staging traces.
pub fn run(scn: &Scenario, out: &Path, workers: Option<usize>) -> Result<Summary> {
    create_dir(out)?;
    let pool = thread_pool(workers)?;
    let (source, compressor) = pool.install(|| -> Result<_> {
        let s = ShotSource::new(scn)?;
        let c = s.compressor()?;
        Ok((s, c))
    })?;
    let mut sink = make_sink(scn)?;
    let pairs = source.pairs();
    for start in (0..pairs).step_by(CHUNK_PAIRS) {
        let end = (start + CHUNK_PAIRS).min(pairs);
        let rows: Vec<Result<CompressedProfile>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|k| {
                    let (a, b) = source.pair(k)?;
                    compressor.pair(&a, &b)
                })
                .collect()
        });
        for r in rows {
            sink.push(r?)?;
        }
    }
    drop(source);
    pool.install(|| finish_summary(scn, pairs, sink, out))
}

/// Bytes that [`simulate`] would write.
pub fn shot_file_bytes(scn: &Scenario) -> u64 {
    2 * scn.row_count() as u64 * TraceRecord::encoded_len(scn.frame_len())
}

/// Writes raw shots to `path`.
pub fn simulate(scn: &Scenario, path: &Path, workers: Option<usize>) -> Result<usize> {
    let bytes = shot_file_bytes(scn);
    if bytes > scn.max_trace_bytes {
        return Err(Error::config(
            "output.max_trace_bytes",
            format!(
                "raw shots would take {bytes} bytes, over the {} byte limit; use `run` to stream instead",
                scn.max_trace_bytes
            ),
        ));
    }
    let pool = thread_pool(workers)?;
    let source = pool.install(|| ShotSource::new(scn))?;
    let mut w = TraceWriter::create(path)?;
    let pairs = source.pairs();
    for start in (0..pairs).step_by(CHUNK_PAIRS) {
        let end = (start + CHUNK_PAIRS).min(pairs);
        let shots: Vec<Result<(Shot, Shot)>> =
            pool.install(|| (start..end).into_par_iter().map(|k| source.pair(k)).collect());
        for s in shots {
            let (a, b) = s?;
            w.write(&TraceRecord::from_shot(&a))?;
            w.write(&TraceRecord::from_shot(&b))?;
        }
    }
    w.finish()?;
    Ok(2 * pairs)
}

/// Compresses a shot file into a profile file; returns the row count.
pub fn compress(
    scn: &Scenario,
    shots: &Path,
    profiles: &Path,
    workers: Option<usize>,
) -> Result<usize> {
    scn.validate()?;
    let pool = thread_pool(workers)?;
    let compressor = {
        // Frames only; the fiber does not matter for the references.
        let model = FiberModel::new(
            scn.fiber.length,
            scn.fiber.group_index,
            scn.fiber.attenuation,
            scn.fiber.wavelength,
        )?;
        Compressor::new(scn, &scn.simulator(&model, scn.fiber.wavelength)?)?
    };
    let mut reader = TraceReader::open(shots)?;
    let mut w = TraceWriter::create(profiles)?;
    let sample_rate = scn.sample_rate();
    let mut rows = 0;
    loop {
        let mut batch = Vec::with_capacity(CHUNK_PAIRS);
        while batch.len() < CHUNK_PAIRS {
            let Some(a) = reader.next_record()? else {
                break;
            };
            let offset = reader.offset();
            let b = reader.next_record()?.ok_or_else(|| Error::Format {
                offset,
                message: "shot file ends inside an A/B pair".into(),
            })?;
            if a.len() != scn.frame_len() || b.len() != scn.frame_len() {
                return Err(Error::Format {
                    offset,
                    message: format!(
                        "shot of {} samples, scenario frames have {}",
                        a.len(),
                        scn.frame_len()
                    ),
                });
            }
            batch.push((a.into_shot()?, b.into_shot()?));
        }
        if batch.is_empty() {
            break;
        }
        let out: Vec<Result<CompressedProfile>> = pool.install(|| {
            batch
                .par_iter()
                .map(|(a, b)| compressor.pair(a, b))
                .collect()
        });
        for p in out {
            w.write(&TraceRecord::from_profile(&p?, sample_rate))?;
            rows += 1;
        }
    }
    w.finish()?;
    Ok(rows)
}

/// Runs the scenario analysis over a profile file.
pub fn analyze(
    scn: &Scenario,
    profiles: &Path,
    out: &Path,
    workers: Option<usize>,
) -> Result<Summary> {
    scn.validate()?;
    create_dir(out)?;
    let pool = thread_pool(workers)?;
    let mut sink = make_sink(scn)?;
    let mut reader = TraceReader::open(profiles)?;
    let mut rows = 0;
    while let Some(r) = reader.next_record()? {
        if r.kind != RecordKind::Profile {
            return Err(Error::Format {
                offset: reader.offset(),
                message: format!("expected profile records, found {}", r.kind.name()),
            });
        }
        sink.push(r.into_profile()?)?;
        rows += 1;
    }
    pool.install(|| finish_summary(scn, rows, sink, out))
}

fn strain_spans(events: &[EnvironmentEvent]) -> Vec<(f64, f64)> {
    events
        .iter()
        .filter(|e| matches!(e, EnvironmentEvent::StrainTone { .. }))
        .map(|e| e.span())
        .collect()
}

/// Keeps the whole waterfall: tone search over a gauge grid, tone
/// localization and the amplitude change map.
pub struct AcousticSink {
    gauge_length: f64,
    margin_db: f64,
    decimation: usize,
    time_decimation: usize,
    spans: Vec<(f64, f64)>,
    rows: Vec<CompressedProfile>,
}

impl AcousticSink {
    pub fn new(scn: &Scenario) -> Self {
        AcousticSink {
            gauge_length: scn.analysis.gauge_length,
            margin_db: scn.analysis.gauge_margin_db,
            decimation: scn.analysis.change_map_decimation,
            time_decimation: scn.analysis.waterfall_decimation,
            spans: strain_spans(&scn.events),
            rows: Vec::new(),
        }
    }
}

impl Sink for AcousticSink {
    fn push(&mut self, row: CompressedProfile) -> Result<()> {
        self.rows.push(row);
        Ok(())
    }

    fn finish(self: Box<Self>, out: &Path) -> Result<Analysis> {
        let w = stack_waterfall(self.rows)?;
        let (step, origin) = (w.position_step(), w.origin());
        let mut acc = PowerAccumulator::new(&w.rows[0]);
        for r in &w.rows {
            acc.add(r)?;
        }
        let power = acc.mean_linear();
        let power_db = acc.mean_db();
        write_trace_csv(&out.join("power_trace.csv"), origin, step, &power_db)?;

        // Change map, decimated in position by keeping each block's maximum.
        let map = amplitude_change_map(&w)?;
        let d = self.decimation;
        let block = |row: &[f32]| -> Vec<f64> {
            row.chunks(d)
                .map(|c| c.iter().cloned().fold(0.0f32, f32::max) as f64)
                .collect()
        };
        let cols: Vec<f64> = (0..w.n_cells().div_ceil(d))
            .map(|j| w.position(j * d))
            .collect();
        let times: Vec<f64> = w.rows[1..].iter().map(|r| r.timestamp).collect();
        write_matrix_csv(
            &out.join("change_map.csv"),
            &cols,
            &times,
            map.iter().map(|r| block(r)),
        )?;
        let means = change_map_mean(&map);
        let inside = |z: f64| self.spans.iter().any(|&(a, b)| z >= a && z <= b);
        let (mut sig, mut bg) = (Vec::new(), Vec::new());
        for (i, &m) in means.iter().enumerate() {
            if inside(w.position(i)) {
                sig.push(m);
            } else {
                bg.push(m);
            }
        }
        let change_ratio = if sig.is_empty() || bg.is_empty() {
            f64::NAN
        } else {
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            mean(&sig) / mean(&bg).max(f64::MIN_POSITIVE)
        };

        // Tone search: each gauge endpoint moves outward to the strongest
        // cell within a quarter gauge to dodge fading.
        let gauges = select_gauges(&power_db, step, origin, self.margin_db, self.gauge_length)?;
        let quarter = ((self.gauge_length / step / 4.0).round() as usize).max(1);
        let phases: Vec<PhaseSeries> = gauges
            .par_iter()
            .map(|&(z1, z2)| {
                let (c1, c2) = (w.index_of(z1), w.index_of(z2));
                let i1 = strongest_cell(&power, c1.saturating_sub(quarter), c1);
                let i2 = strongest_cell(&power, c2, c2 + quarter);
                phase_between(
                    &CellSeries::from_waterfall(&w, i1),
                    &CellSeries::from_waterfall(&w, i2),
                    w.row_period,
                    (w.position(i1), w.position(i2)),
                )
            })
            .collect::<Result<_>>()?;
        let tones: Vec<Option<Tone>> = phases
            .par_iter()
            .map(detect_tone)
            .collect::<Result<_>>()?;
        let tone = tones
            .iter()
            .flatten()
            .copied()
            .max_by(|a, b| a.power.total_cmp(&b.power));

        let centers: Vec<f64> = phases.iter().map(|p| 0.5 * (p.gauge.0 + p.gauge.1)).collect();
        let row_times: Vec<f64> = w.timestamps();
        let keep: Vec<usize> = (0..w.n_rows()).step_by(self.time_decimation).collect();
        write_matrix_csv(
            &out.join("phase_waterfall.csv"),
            &centers,
            &keep.iter().map(|&i| row_times[i]).collect::<Vec<_>>(),
            keep.iter().map(|&i| phases.iter().map(|p| p.values[i]).collect()),
        )?;

        let mut location = None;
        let mut f = TextFile::create(&out.join("tones.csv"))?;
        f.line("gauge_start_m,gauge_end_m,tone_hz,tone_power")?;
        for (p, t) in phases.iter().zip(&tones) {
            f.row([
                num(p.gauge.0),
                num(p.gauge.1),
                t.map_or("none".into(), |t| num(t.frequency)),
                t.map_or("none".into(), |t| num(t.power)),
            ])?;
        }
        if let Some(t) = tone {
            let scan = scan_tone(&w, t.frequency, self.gauge_length)?;
            f.line("")?;
            f.line("scan_center_m,line_power")?;
            for (c, p) in scan.centers.iter().zip(&scan.powers) {
                f.row([num(*c), num(*p)])?;
            }
            location = localize_in_scan(&scan, t.frequency).ok();
        }
        f.finish()?;
        Ok(Analysis::Acoustic(AcousticResult {
            gauges: gauges.len(),
            tone,
            location,
            change_ratio,
        }))
    }
}

/// Streams rows for one long gauge around a heated span: mean power plus
/// the time series of the candidate endpoint cells.
pub struct ThermalSink {
    gauge: (f64, f64),
    search: f64,
    acc: Option<PowerAccumulator>,
    candidates: Vec<(usize, CellSeries)>,
    /// Candidates before this index belong to the upstream end.
    split: usize,
    t0: Option<f64>,
    last_t: f64,
    rows: usize,
    wavelength: f64,
    constants: ccotdr_core::SensingConstants,
    event: EnvironmentEvent,
    slope_window: f64,
    start_temperature: f64,
    smoothing: usize,
    tone_high_pass: f64,
}

impl ThermalSink {
    pub fn new(scn: &Scenario) -> Result<Self> {
        let gauge = scn
            .analysis
            .gauge
            .ok_or_else(|| Error::config("analysis.gauge", "thermal analysis needs a gauge"))?;
        let event = scn
            .temperature_event()
            .cloned()
            .ok_or_else(|| Error::config("event.1.kind", "thermal analysis needs a temperature event"))?;
        Ok(ThermalSink {
            gauge,
            search: scn.analysis.endpoint_search.max(0.0),
            acc: None,
            candidates: Vec::new(),
            split: 0,
            t0: None,
            last_t: 0.0,
            rows: 0,
            wavelength: scn.fiber.wavelength,
            constants: scn.analysis.constants,
            event,
            slope_window: scn.analysis.slope_window,
            start_temperature: scn.analysis.start_temperature,
            smoothing: scn.analysis.smoothing,
            tone_high_pass: scn.analysis.tone_high_pass,
        })
    }
}

impl Sink for ThermalSink {
    fn push(&mut self, row: CompressedProfile) -> Result<()> {
        if self.acc.is_none() {
            let (z1, z2) = self.gauge;
            let lo = row.index_of(z1 - self.search);
            let c1 = row.index_of(z1);
            let c2 = row.index_of(z2);
            let hi = row.index_of(z2 + self.search);
            self.split = c1 - lo + 1;
            self.candidates = (lo..=c1)
                .chain(c2..=hi)
                .map(|c| (c, CellSeries::default()))
                .collect();
            self.acc = Some(PowerAccumulator::new(&row));
            self.t0 = Some(row.timestamp);
        }
        self.acc.as_mut().expect("initialized").add(&row)?;
        for (c, s) in &mut self.candidates {
            s.push(&row, *c);
        }
        self.last_t = row.timestamp;
        self.rows += 1;
        Ok(())
    }

    fn finish(self: Box<Self>, out: &Path) -> Result<Analysis> {
        let acc = self
            .acc
            .ok_or_else(|| Error::InvalidInput("thermal analysis received no rows".into()))?;
        let (step, origin) = (acc.position_step(), acc.origin());
        let power = acc.mean_linear();
        write_trace_csv(&out.join("power_trace.csv"), origin, step, &acc.mean_db())?;
        if self.rows < 2 {
            return Err(Error::InvalidInput("thermal analysis needs ≥ 2 rows".into()));
        }
        let dt = (self.last_t - self.t0.unwrap_or(0.0)) / (self.rows - 1) as f64;
        let t0 = self.t0.unwrap_or(0.0);

        let split = self.split;
        let best = |range: std::ops::Range<usize>| -> usize {
            range
                .max_by(|&a, &b| {
                    power[self.candidates[a].0].total_cmp(&power[self.candidates[b].0])
                })
                .expect("candidate cells")
        };
        let k1 = best(0..split);
        let k2 = best(split..self.candidates.len());
        let (c1, c2) = (self.candidates[k1].0, self.candidates[k2].0);
        let gauge = (origin + c1 as f64 * step, origin + c2 as f64 * step);
        let phase = phase_between(
            &self.candidates[k1].1,
            &self.candidates[k2].1,
            dt,
            gauge,
        )?;

        // Tone: strip the slow thermal drift first.
        let half = ((self.tone_high_pass / dt) / 2.0).round() as usize;
        let ac = PhaseSeries {
            values: high_pass(&phase.values, half.max(1)),
            ..phase.clone()
        };
        let tone = detect_tone(&ac)?;

        let EnvironmentEvent::TemperatureProfile {
            span,
            delta_t,
            dn_dt,
            tau,
        } = &self.event
        else {
            unreachable!("thermal sink holds a temperature event");
        };
        let heated = span.1 - span.0;
        let conv = self.constants.convention;
        let slopes = phase_slope(&phase, self.slope_window)?;
        let mut core = core_temperature_series(
            &slopes,
            heated,
            self.wavelength,
            *dn_dt,
            conv,
            self.start_temperature,
        )?;
        core.start += t0;

        // dn/dT from the measured slopes against the reference core rate,
        // both taken as least-squares slopes over the same windows.
        let reference_core: Vec<f64> = (0..phase.len())
            .map(|i| delta_t.low_pass(*tau, t0 + i as f64 * dt))
            .collect();
        let reference_rates = phase_slope(
            &PhaseSeries {
                values: reference_core,
                ..phase.clone()
            },
            self.slope_window,
        )?;
        let phase_per_kelvin_per_dn =
            conv.factor() * std::f64::consts::TAU * heated / self.wavelength;
        let (sxy, sxx) = slopes
            .values
            .iter()
            .zip(&reference_rates.values)
            .fold((0.0, 0.0), |(sxy, sxx), (s, r)| (sxy + s * r, sxx + r * r));
        let dn_dt_estimate = sxy / sxx / phase_per_kelvin_per_dn;

        let chamber = if *tau > 0.0 {
            inverse_filter_chamber(&core, *tau, self.smoothing)?
        } else {
            core.clone()
        };
        let chamber_ref: Vec<f64> = (0..chamber.values.len())
            .map(|i| self.start_temperature + delta_t.eval(chamber.time(i)))
            .collect();
        let core_ref: Vec<f64> = (0..core.values.len())
            .map(|i| self.start_temperature + delta_t.low_pass(*tau, core.time(i)))
            .collect();
        let settled: Vec<usize> = (0..chamber.values.len())
            .filter(|&i| chamber.time(i) >= 3.0 * tau)
            .collect();
        let pick = |v: &[f64]| -> Vec<f64> { settled.iter().map(|&i| v[i]).collect() };
        let chamber_rmse = dsp::rmse(&pick(&chamber.values), &pick(&chamber_ref));
        let core_rmse = dsp::rmse(&core.values, &core_ref);

        let mut f = TextFile::create(&out.join("temperature.csv"))?;
        f.line("time_s,core_c,core_reference_c,chamber_estimate_c,chamber_reference_c")?;
        for i in 0..core.values.len() {
            f.row([
                num(core.time(i)),
                num(core.values[i]),
                num(core_ref[i]),
                num(chamber.values[i]),
                num(chamber_ref[i]),
            ])?;
        }
        f.finish()?;
        let mut f = TextFile::create(&out.join("tones.csv"))?;
        f.line("gauge_start_m,gauge_end_m,tone_hz,tone_power")?;
        f.row([
            num(gauge.0),
            num(gauge.1),
            tone.map_or("none".into(), |t| num(t.frequency)),
            tone.map_or("none".into(), |t| num(t.power)),
        ])?;
        f.finish()?;

        Ok(Analysis::Thermal(ThermalResult {
            gauge,
            low_confidence: phase.low_confidence_count(),
            tone,
            dn_dt_estimate,
            chamber_rmse,
            core_rmse,
        }))
    }
}

/// Collects one row per sweep wavelength and reads out the grating spectra.
pub struct FbgSink {
    wavelengths: Vec<f64>,
    positions: Vec<f64>,
    bragg: Vec<f64>,
    resolution: f64,
    dip_db: f64,
    peak_window: (f64, f64),
    rows: Vec<CompressedProfile>,
}

impl FbgSink {
    pub fn new(scn: &Scenario) -> Result<Self> {
        let gratings = scn.fbg_gratings()?;
        let positions: Vec<f64> = gratings.iter().map(|g| g.position).collect();
        let peak_window = scn.analysis.peak_window.unwrap_or_else(|| {
            let lo = positions.first().copied().unwrap_or(0.0);
            (lo, lo + 2.0)
        });
        Ok(FbgSink {
            wavelengths: scn.wavelengths(),
            bragg: gratings.iter().map(|g| g.bragg_wavelength).collect(),
            positions,
            resolution: scn.resolution(),
            dip_db: scn.analysis.resolution_dip_db,
            peak_window,
            rows: Vec::new(),
        })
    }
}

impl Sink for FbgSink {
    fn push(&mut self, row: CompressedProfile) -> Result<()> {
        self.rows.push(row);
        Ok(())
    }

    fn finish(self: Box<Self>, out: &Path) -> Result<Analysis> {
        if self.rows.len() != self.wavelengths.len() {
            return Err(Error::InvalidInput(format!(
                "sweep has {} wavelengths but {} profiles",
                self.wavelengths.len(),
                self.rows.len()
            )));
        }
        let first = &self.rows[0];
        let (step, origin) = (first.position_step, first.origin);
        let max_hold: Vec<f64> = {
            let mut m = vec![0.0f64; first.len()];
            for r in &self.rows {
                for (a, p) in m.iter_mut().zip(r.power()) {
                    *a = a.max(p);
                }
            }
            m.into_iter().map(dsp::to_db).collect()
        };
        write_trace_csv(&out.join("power_trace.csv"), origin, step, &max_hold)?;

        let sweep: Vec<(f64, CompressedProfile)> =
            self.wavelengths.iter().copied().zip(self.rows).collect();
        let spectra = fbg_spectra(&sweep, &self.positions, self.resolution)?;
        let sweep_step = self.wavelengths[1] - self.wavelengths[0];
        let errors: Vec<f64> = spectra
            .iter()
            .zip(&self.bragg)
            .map(|(s, b)| (s.bragg_estimate - b).abs())
            .collect();
        let max_bragg_error = errors.iter().cloned().fold(0.0, f64::max);
        let estimates: Vec<f64> = spectra.iter().map(|s| s.bragg_estimate).collect();
        let periodicity = if estimates.len() >= 8 {
            bragg_periodicity(&estimates)?
        } else {
            None
        };
        let unresolved_pairs = self
            .positions
            .windows(2)
            .filter(|p| !resolves_two_points(&max_hold, step, origin, p[0], p[1], self.dip_db))
            .count();

        // Peaks within 10 dB of the strongest one in the window.
        let (w0, w1) = self.peak_window;
        let in_window = |i: usize| {
            let z = origin + i as f64 * step;
            z >= w0 && z <= w1
        };
        let top = (0..max_hold.len())
            .filter(|&i| in_window(i))
            .map(|i| max_hold[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let peaks_in_window = find_peaks(&max_hold, top - 10.0)
            .into_iter()
            .filter(|&i| in_window(i))
            .count();

        let mut f = TextFile::create(&out.join("fbg_spectra.csv"))?;
        f.line("grating,position_m,wavelength_nm,power_db")?;
        for s in &spectra {
            for (l, p) in s.wavelengths.iter().zip(&s.powers) {
                f.row([
                    s.grating_index.to_string(),
                    num(s.position),
                    num(l * 1e9),
                    num(dsp::to_db(*p)),
                ])?;
            }
        }
        f.finish()?;
        let mut f = TextFile::create(&out.join("bragg.csv"))?;
        f.line("grating,position_m,bragg_nm,estimate_nm,error_pm")?;
        for (s, (b, e)) in spectra.iter().zip(self.bragg.iter().zip(&errors)) {
            f.row([
                s.grating_index.to_string(),
                num(s.position),
                num(b * 1e9),
                num(s.bragg_estimate * 1e9),
                num(e * 1e12),
            ])?;
        }
        f.finish()?;

        Ok(Analysis::Fbg(FbgResult {
            gratings: spectra.len(),
            unresolved_pairs,
            max_bragg_error,
            sweep_step,
            periodicity,
            peak_window: self.peak_window,
            peaks_in_window,
        }))
    }
}
