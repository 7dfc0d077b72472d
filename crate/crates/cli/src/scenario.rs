//! Scenario configuration: a line-based `section.key = value` file plus
//! command-line overrides, parsed into a validated [`Scenario`].

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ccotdr_core::fibermodel::{
    build_fbg_array, generate_scatterers, Fbg, FbgArraySpec, DEFAULT_SCATTERERS_PER_CELL,
    DEFAULT_STRAIN_OPTIC_FACTOR, DEFAULT_THERMAL_TAU,
};
use ccotdr_core::probe::{golay_pair, required_zero_pad, spatial_resolution, MAX_GOLAY_ORDER};
use ccotdr_core::sim::{awgn_sigma_for_floor_snr, psf_energy, DEFAULT_FLOOR_SNR_DB, DEFAULT_LINEWIDTH};
use ccotdr_core::{
    compress::position_step, EnvironmentEvent, Error, FiberModel, LaserModel, NoiseModel,
    PairTiming, PhaseConvention, PiecewiseLinear, PolarizationField, Result, SensingConstants, ShotSimulator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Acoustic,
    Thermal,
    Fbg,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Acoustic => "acoustic",
            ScenarioKind::Thermal => "thermal",
            ScenarioKind::Fbg => "fbg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberSpec {
    pub length: f64,
    pub group_index: f64,
    /// dB/km, one way.
    pub attenuation: f64,
    pub wavelength: f64,
    /// Mean compressed Rayleigh power per position sample near the input, dB.
    pub rayleigh_floor_db: f64,
    pub scatterers_per_cell: f64,
    /// `None` keeps a single fixed polarization state.
    pub pol_correlation_length: Option<f64>,
    /// `(position m, power reflectivity dB)`.
    pub reflectors: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    pub order: u32,
    pub symbol_rate: f64,
    pub samples_per_symbol: usize,
    /// `None` derives the pad from the fiber length.
    pub zero_pad: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub enabled: bool,
    pub floor_snr_db: f64,
    /// Explicit per-quadrature sigma; overrides `floor_snr_db`.
    pub awgn_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub shot_rate: f64,
    pub duration: f64,
    pub pair_timing: PairTiming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSpec {
    pub constants: SensingConstants,
    pub gauge_length: f64,
    pub gauge_margin_db: f64,
    /// Explicit gauge `[z1, z2]` for the thermal analysis.
    pub gauge: Option<(f64, f64)>,
    /// Gauge endpoints move up to this far outward to a stronger cell, m.
    pub endpoint_search: f64,
    pub change_map_decimation: usize,
    pub waterfall_decimation: usize,
    pub slope_window: f64,
    pub start_temperature: f64,
    pub smoothing: usize,
    /// Centered moving-average length removed before thermal tone detection, s.
    pub tone_high_pass: f64,
    pub peak_window: Option<(f64, f64)>,
    pub resolution_dip_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub points: usize,
    /// Full sweep width, m, centered on the array's base wavelength.
    pub span: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbgScenario {
    pub array: FbgArraySpec,
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub fiber: FiberSpec,
    pub probe: ProbeSpec,
    pub linewidth: f64,
    pub noise: NoiseSpec,
    pub campaign: CampaignSpec,
    pub events: Vec<EnvironmentEvent>,
    pub analysis: AnalysisSpec,
    pub fbg: Option<FbgScenario>,
    pub output_dir: PathBuf,
    /// Refuse staged trace output larger than this, bytes.
    pub max_trace_bytes: u64,
}

/// Raw `key = value` entries with the line each came from (0 for overrides).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", i + 1),
                    format!("expected `key = value`, found `{line}`"),
                ));
            };
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::config(
                    format!("line {}", i + 1),
                    format!("malformed key `{key}`"),
                ));
            }
            if entries
                .insert(key.to_string(), (value.trim().to_string(), i + 1))
                .is_some()
            {
                return Err(Error::config(key, format!("set twice (line {})", i + 1)));
            }
        }
        Ok(ConfigMap { entries })
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Error::config(
                assignment,
                "override must have the form key=value",
            ));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::config(assignment, "override has an empty key"));
        }
        self.entries
            .insert(key.to_string(), (value.trim().to_string(), 0));
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Reads entries out of a [`ConfigMap`], remembering which keys were used.
struct Reader<'a> {
    map: &'a ConfigMap,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl<'a> Reader<'a> {
    fn new(map: &'a ConfigMap) -> Self {
        Reader {
            map,
            used: Default::default(),
        }
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        let v = self.map.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.0.as_str())
    }

    fn has(&self, key: &str) -> bool {
        self.map.entries.contains_key(key)
    }

    fn parse_value<T: FromStr>(&self, key: &str, text: &str) -> Result<T>
    where
        T::Err: Display,
    {
        text.parse::<T>()
            .map_err(|e| Error::config(key, format!("cannot parse `{text}`: {e}")))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => self.parse_value(key, v).map(Some),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::config(key, "required key is missing"))
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(v) => Err(Error::config(key, format!("expected true/false, found `{v}`"))),
        }
    }

    fn pair(&self, key: &str) -> Result<Option<(f64, f64)>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::config(key, format!("expected `a, b`, found `{v}`")));
        }
        Ok(Some((
            self.parse_value(key, parts[0])?,
            self.parse_value(key, parts[1])?,
        )))
    }

    /// `a:b, c:d, ...` lists.
    fn point_list(&self, key: &str) -> Result<Vec<(f64, f64)>> {
        let Some(v) = self.raw(key) else {
            return Ok(Vec::new());
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| {
                let (a, b) = item.split_once(':').ok_or_else(|| {
                    Error::config(key, format!("expected `position:value`, found `{item}`"))
                })?;
                Ok((
                    self.parse_value(key, a.trim())?,
                    self.parse_value(key, b.trim())?,
                ))
            })
            .collect()
    }

    fn unused(&self) -> Option<String> {
        let used = self.used.borrow();
        self.map.keys().find(|k| !used.contains(*k)).map(str::to_string)
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(key, format!("must be a positive number, got {v}")))
    }
}

impl Scenario {
    /// Loads a scenario file and applies `key=value` overrides on top.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut map = ConfigMap::parse(text)?;
        for o in overrides {
            map.set(o)?;
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let r = Reader::new(map);
        let kind = match r.required::<String>("kind")?.as_str() {
            "acoustic" => ScenarioKind::Acoustic,
            "thermal" => ScenarioKind::Thermal,
            "fbg" => ScenarioKind::Fbg,
            other => {
                return Err(Error::config(
                    "kind",
                    format!("unknown scenario kind `{other}` (acoustic, thermal, fbg)"),
                ))
            }
        };
        let name = r.or("name", kind.name().to_string())?;
        let seed = r.or("seed", 1u64)?;

        let fiber = FiberSpec {
            length: positive("fiber.length", r.required("fiber.length")?)?,
            group_index: r.or("fiber.group_index", 1.468)?,
            attenuation: r.or("fiber.attenuation", 0.2)?,
            wavelength: positive("fiber.wavelength", r.or("fiber.wavelength", 1550e-9)?)?,
            rayleigh_floor_db: r.or("fiber.rayleigh_floor_db", -70.0)?,
            scatterers_per_cell: positive(
                "fiber.scatterers_per_cell",
                r.or("fiber.scatterers_per_cell", DEFAULT_SCATTERERS_PER_CELL)?,
            )?,
            pol_correlation_length: match r.raw("fiber.pol_correlation_length") {
                None | Some("none") => None,
                Some(v) => Some(positive(
                    "fiber.pol_correlation_length",
                    r.parse_value("fiber.pol_correlation_length", v)?,
                )?),
            },
            reflectors: r.point_list("fiber.reflectors")?,
        };
        if fiber.attenuation < 0.0 {
            return Err(Error::config("fiber.attenuation", "must be ≥ 0"));
        }

        let order: u32 = r.required("probe.order")?;
        if order > MAX_GOLAY_ORDER {
            return Err(Error::config(
                "probe.order",
                format!("{order} exceeds the limit of {MAX_GOLAY_ORDER}"),
            ));
        }
        let probe = ProbeSpec {
            order,
            symbol_rate: positive("probe.symbol_rate", r.required("probe.symbol_rate")?)?,
            samples_per_symbol: r.or("probe.samples_per_symbol", 2usize)?,
            zero_pad: match r.raw("probe.zero_pad") {
                None | Some("auto") => None,
                Some(v) => Some(r.parse_value("probe.zero_pad", v)?),
            },
        };
        if probe.samples_per_symbol == 0 {
            return Err(Error::config("probe.samples_per_symbol", "must be ≥ 1"));
        }

        let linewidth: f64 = r.or("laser.linewidth", DEFAULT_LINEWIDTH)?;
        if !(linewidth >= 0.0) {
            return Err(Error::config("laser.linewidth", "must be ≥ 0"));
        }
        let noise = NoiseSpec {
            enabled: r.flag("noise.enabled", true)?,
            floor_snr_db: r.or("noise.floor_snr_db", DEFAULT_FLOOR_SNR_DB)?,
            awgn_sigma: r.get("noise.awgn_sigma")?,
        };
        let campaign = CampaignSpec {
            shot_rate: positive("campaign.shot_rate", r.or("campaign.shot_rate", 2000.0)?)?,
            duration: positive("campaign.duration", r.or("campaign.duration", 1.0)?)?,
            pair_timing: match r.or("campaign.pair_timing", "burst".to_string())?.as_str() {
                "burst" => PairTiming::Burst,
                "uniform" => PairTiming::Uniform,
                other => {
                    return Err(Error::config(
                        "campaign.pair_timing",
                        format!("unknown timing `{other}` (burst, uniform)"),
                    ))
                }
            },
        };

        let constants = SensingConstants {
            strain_optic_factor: r.or("analysis.strain_optic_factor", DEFAULT_STRAIN_OPTIC_FACTOR)?,
            convention: match r.or("analysis.phase_convention", "single_pass".to_string())?.as_str() {
                "single_pass" => PhaseConvention::SinglePass,
                "double_pass" => PhaseConvention::DoublePass,
                other => {
                    return Err(Error::config(
                        "analysis.phase_convention",
                        format!("unknown convention `{other}` (single_pass, double_pass)"),
                    ))
                }
            },
        };
        let events = parse_events(&r)?;
        let analysis = AnalysisSpec {
            constants,
            gauge_length: positive("analysis.gauge_length", r.or("analysis.gauge_length", 4.0)?)?,
            gauge_margin_db: r.or("analysis.gauge_margin_db", 0.0)?,
            gauge: r.pair("analysis.gauge")?,
            endpoint_search: r.or("analysis.endpoint_search", 0.5)?,
            change_map_decimation: r.or("analysis.change_map_decimation", 8usize)?.max(1),
            waterfall_decimation: r.or("analysis.waterfall_decimation", 1usize)?.max(1),
            slope_window: positive("analysis.slope_window", r.or("analysis.slope_window", 2.7)?)?,
            start_temperature: r.or("analysis.start_temperature", 30.0)?,
            smoothing: r.or("analysis.smoothing", 3usize)?,
            tone_high_pass: positive(
                "analysis.tone_high_pass",
                r.or("analysis.tone_high_pass", 0.025)?,
            )?,
            peak_window: r.pair("analysis.peak_window")?,
            resolution_dip_db: r.or("analysis.resolution_dip_db", 3.0)?,
        };

        let fbg = if kind == ScenarioKind::Fbg {
            let base: f64 = r.or("fbg.base_wavelength", fiber.wavelength)?;
            Some(FbgScenario {
                array: FbgArraySpec {
                    count: r.required("fbg.count")?,
                    spacing: positive("fbg.spacing", r.required("fbg.spacing")?)?,
                    start: r.or("fbg.start", 1.0)?,
                    base_wavelength: base,
                    variation_amplitude: r.or("fbg.variation_amplitude", 0.0)?,
                    variation_period: r.or("fbg.variation_period", 10.0)?,
                    sigma: positive("fbg.sigma", r.required("fbg.sigma")?)?,
                    peak_amplitude: 10f64.powf(r.or("fbg.peak_db", -30.0)? / 20.0),
                },
                sweep: SweepSpec {
                    points: r.or("sweep.points", 21usize)?,
                    span: positive("sweep.span", r.required("sweep.span")?)?,
                },
            })
        } else {
            None
        };

        let output_dir = PathBuf::from(r.or("output.dir", format!("out/{}", kind.name()))?);
        let max_trace_bytes = r.or("output.max_trace_bytes", 1u64 << 30)?;

        if let Some(key) = r.unused() {
            return Err(Error::config(key, "unknown key"));
        }
        Ok(Scenario {
            name,
            kind,
            seed,
            fiber,
            probe,
            linewidth,
            noise,
            campaign,
            events,
            analysis,
            fbg,
            output_dir,
            max_trace_bytes,
        })
    }

    pub fn zero_pad(&self) -> usize {
        self.probe.zero_pad.unwrap_or_else(|| {
            required_zero_pad(self.fiber.length, self.fiber.group_index, self.probe.symbol_rate)
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.probe.symbol_rate * self.probe.samples_per_symbol as f64
    }

    pub fn position_step(&self) -> f64 {
        position_step(self.sample_rate(), self.fiber.group_index)
    }

    pub fn resolution(&self) -> f64 {
        spatial_resolution(self.probe.symbol_rate, self.fiber.group_index)
    }

    pub fn frame_len(&self) -> usize {
        ((1usize << self.probe.order) + self.zero_pad()) * self.probe.samples_per_symbol
    }

    pub fn frame_duration(&self) -> f64 {
        self.frame_len() as f64 / self.sample_rate()
    }

    /// Shots in the campaign (always whole A/B pairs).
    pub fn shot_count(&self) -> usize {
        let n = (self.campaign.duration * self.campaign.shot_rate).round() as usize;
        n - n % 2
    }

    /// Rows after combining A/B pairs.
    pub fn row_count(&self) -> usize {
        match self.kind {
            ScenarioKind::Fbg => self.fbg.as_ref().map_or(0, |f| f.sweep.points),
            _ => self.shot_count() / 2,
        }
    }

    /// Firing time of shot `i`.
    pub fn shot_time(&self, i: usize) -> f64 {
        self.campaign
            .pair_timing
            .timestamp(i, self.campaign.shot_rate, self.frame_duration())
    }

    pub fn row_period(&self) -> f64 {
        2.0 / self.campaign.shot_rate
    }

    pub fn fbg_gratings(&self) -> Result<Vec<Fbg>> {
        match &self.fbg {
            Some(f) => build_fbg_array(&f.array, self.fiber.length),
            None => Ok(Vec::new()),
        }
    }

    /// Probe wavelengths of the run: the sweep for a grating scenario, the
    /// fiber wavelength otherwise.
    pub fn wavelengths(&self) -> Vec<f64> {
        match &self.fbg {
            Some(f) if f.sweep.points > 1 => {
                let lo = f.array.base_wavelength - f.sweep.span / 2.0;
                let step = f.sweep.span / (f.sweep.points - 1) as f64;
                (0..f.sweep.points).map(|k| lo + k as f64 * step).collect()
            }
            Some(f) => vec![f.array.base_wavelength],
            None => vec![self.fiber.wavelength],
        }
    }

    /// Mean Rayleigh power per compressed sample, linear.
    pub fn floor_power(&self) -> f64 {
        10f64.powf(self.fiber.rayleigh_floor_db / 10.0)
    }

    fn scatterer_amplitude(&self) -> f64 {
        // E[P] = density · step · a² · Σ psf², with `scatterers_per_cell`
        // per resolution cell.
        let density = self.fiber.scatterers_per_cell / self.resolution();
        let per_sample = density * self.position_step() * psf_energy(self.probe.samples_per_symbol);
        (self.floor_power() / per_sample).sqrt()
    }

    pub fn awgn_sigma(&self) -> f64 {
        if !self.noise.enabled {
            return 0.0;
        }
        self.noise.awgn_sigma.unwrap_or_else(|| {
            let energy = ((1usize << self.probe.order) * self.probe.samples_per_symbol) as f64;
            awgn_sigma_for_floor_snr(self.floor_power(), energy, self.noise.floor_snr_db)
        })
    }

    /// Checks physical feasibility: zero pad, shot rate, event and gauge
    /// placement, tone frequencies.
    pub fn validate(&self) -> Result<()> {
        let f = &self.fiber;
        if !(1.4..=1.6).contains(&f.group_index) {
            return Err(Error::physics(
                "fiber.group_index",
                format!("{} is outside [1.4, 1.6]", f.group_index),
            ));
        }
        for (i, (z, db)) in f.reflectors.iter().enumerate() {
            if !(0.0..=f.length).contains(z) || *db > 0.0 {
                return Err(Error::physics(
                    "fiber.reflectors",
                    format!("reflector {i} at {z} m / {db} dB must lie in the fiber and be ≤ 0 dB"),
                ));
            }
        }
        let need = required_zero_pad(f.length, f.group_index, self.probe.symbol_rate);
        if self.zero_pad() < need {
            return Err(Error::physics(
                "probe.zero_pad",
                format!(
                    "{} symbols is shorter than the {need} symbols a {} m fiber needs",
                    self.zero_pad(),
                    f.length
                ),
            ));
        }
        let max_rate = 1.0 / self.frame_duration();
        if self.campaign.shot_rate > max_rate {
            return Err(Error::physics(
                "campaign.shot_rate",
                format!(
                    "{} Hz exceeds the {max_rate:.0} Hz allowed by the {:.3e} s frame",
                    self.campaign.shot_rate,
                    self.frame_duration()
                ),
            ));
        }
        if self.kind != ScenarioKind::Fbg && self.shot_count() < 2 {
            return Err(Error::physics(
                "campaign.duration",
                "campaign holds less than one A/B shot pair",
            ));
        }
        let nyquist = 0.5 / self.row_period();
        for (i, e) in self.events.iter().enumerate() {
            let key = format!("event.{}", i + 1);
            e.validate(f.length)
                .map_err(|err| Error::physics(&key, err.to_string()))?;
            if let EnvironmentEvent::StrainTone { frequency, .. } = e {
                if self.kind != ScenarioKind::Fbg && *frequency >= nyquist {
                    return Err(Error::physics(
                        format!("{key}.frequency"),
                        format!("{frequency} Hz is not below the {nyquist} Hz row Nyquist rate"),
                    ));
                }
            }
        }
        let step = self.position_step();
        if self.analysis.gauge_length < step {
            return Err(Error::physics(
                "analysis.gauge_length",
                format!("shorter than the {step:.4} m sample spacing"),
            ));
        }
        if let Some((a, b)) = self.analysis.gauge {
            if !(0.0 <= a && a < b && b <= f.length) {
                return Err(Error::physics(
                    "analysis.gauge",
                    format!("[{a}, {b}] m is not an ordered gauge inside the fiber"),
                ));
            }
        }
        match self.kind {
            ScenarioKind::Thermal => {
                if self.analysis.gauge.is_none() {
                    return Err(Error::config("analysis.gauge", "thermal analysis needs a gauge"));
                }
                if self.temperature_event().is_none() {
                    return Err(Error::config(
                        "event.1.kind",
                        "thermal analysis needs a temperature event",
                    ));
                }
                let rows = self.row_count() as f64 * self.row_period();
                if self.analysis.slope_window > rows {
                    return Err(Error::physics(
                        "analysis.slope_window",
                        "slope window is longer than the campaign",
                    ));
                }
            }
            ScenarioKind::Fbg => {
                let fbg = self.fbg.as_ref().expect("grating scenario has an array");
                if fbg.sweep.points < 3 {
                    return Err(Error::physics("sweep.points", "a sweep needs ≥ 3 wavelengths"));
                }
                if fbg.array.spacing < self.resolution() {
                    return Err(Error::physics(
                        "fbg.spacing",
                        format!(
                            "{} m is below the {:.4} m resolution",
                            fbg.array.spacing,
                            self.resolution()
                        ),
                    ));
                }
                self.fbg_gratings()
                    .map_err(|e| Error::physics("fbg.count", e.to_string()))?;
            }
            ScenarioKind::Acoustic => {
                if self.row_count() < 64 {
                    return Err(Error::physics(
                        "campaign.duration",
                        "tone analysis needs ≥ 64 rows",
                    ));
                }
            }
        }
        golay_pair(self.probe.order).map_err(|e| Error::physics("probe.order", e.to_string()))?;
        Ok(())
    }

    pub fn temperature_event(&self) -> Option<&EnvironmentEvent> {
        self.events
            .iter()
            .find(|e| matches!(e, EnvironmentEvent::TemperatureProfile { .. }))
    }

    /// The fiber with its scatterers, reflectors, gratings and polarization.
    pub fn build_model(&self) -> Result<FiberModel> {
        let f = &self.fiber;
        let density = f.scatterers_per_cell / self.resolution();
        let scatterers = generate_scatterers(f.length, density, self.scatterer_amplitude(), self.seed)?;
        let mut model = FiberModel::new(f.length, f.group_index, f.attenuation, f.wavelength)?
            .with_scatterers(scatterers)?
            .with_fbgs(self.fbg_gratings()?)?;
        for &(z, db) in &f.reflectors {
            model = model.add_point_reflector(z, db)?;
        }
        if let Some(corr) = f.pol_correlation_length {
            model = model.with_polarization(PolarizationField::random(f.length, corr, self.seed)?);
        }
        Ok(model)
    }

    pub fn laser(&self, wavelength: f64) -> LaserModel {
        LaserModel {
            wavelength,
            linewidth: self.linewidth,
            seed: self.seed,
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            awgn_sigma: self.awgn_sigma(),
            enabled: self.noise.enabled,
        }
    }

    pub fn simulator(&self, model: &FiberModel, wavelength: f64) -> Result<ShotSimulator> {
        let pair = golay_pair(self.probe.order)?;
        ShotSimulator::for_pair(
            model,
            &pair,
            self.probe.samples_per_symbol,
            self.zero_pad(),
            self.probe.symbol_rate,
            &self.events,
            &self.analysis.constants,
            &self.laser(wavelength),
            &self.noise_model(),
        )
    }
}

fn parse_events(r: &Reader<'_>) -> Result<Vec<EnvironmentEvent>> {
    let mut events = Vec::new();
    for i in 1.. {
        let key = |k: &str| format!("event.{i}.{k}");
        if !r.has(&key("kind")) {
            break;
        }
        let kind: String = r.required(&key("kind"))?;
        let span = r
            .pair(&key("span"))?
            .ok_or_else(|| Error::config(key("span"), "required key is missing"))?;
        let event = match kind.as_str() {
            "strain_tone" => EnvironmentEvent::StrainTone {
                span,
                amplitude: r.required(&key("amplitude"))?,
                frequency: r.required(&key("frequency"))?,
                phase: r.or(&key("phase"), 0.0)?,
            },
            "temperature" => {
                let points = r.point_list(&key("profile"))?;
                let delta_t = PiecewiseLinear::new(points)
                    .map_err(|e| Error::config(key("profile"), e.to_string()))?;
                EnvironmentEvent::TemperatureProfile {
                    span,
                    delta_t,
                    dn_dt: r.or(&key("dn_dt"), 1e-5)?,
                    tau: r.or(&key("tau"), DEFAULT_THERMAL_TAU)?,
                }
            }
            other => {
                return Err(Error::config(
                    key("kind"),
                    format!("unknown event kind `{other}` (strain_tone, temperature)"),
                ))
            }
        };
        events.push(event);
    }
    Ok(events)
}
