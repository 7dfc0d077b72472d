//! The sensor fiber: Rayleigh scatterers, discrete reflectors, Bragg gratings,
//! and the environmental perturbations that change their optical path.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Upper bound on generated scatterers.
pub const MAX_SCATTERERS: f64 = 1e8;

/// Default strain-optic factor ξ (fraction of elongation that shows up as
/// optical path, after the photo-elastic correction).
pub const DEFAULT_STRAIN_OPTIC_FACTOR: f64 = 0.79;

/// Default number of Rayleigh scatterers per spatial-resolution cell.
pub const DEFAULT_SCATTERERS_PER_CELL: f64 = 10.0;

/// Default chamber-to-core thermal time constant, seconds.
pub const DEFAULT_THERMAL_TAU: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: f64,
    pub reflectivity: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointReflector {
    pub position: f64,
    /// Power reflectivity relative to the probe, dB (≤ 0).
    pub power_reflectivity: f64,
}

impl PointReflector {
    pub fn amplitude(&self) -> f64 {
        10f64.powf(self.power_reflectivity / 20.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fbg {
    pub position: f64,
    pub bragg_wavelength: f64,
    pub spectral_sigma: f64,
    pub peak_amplitude: f64,
}

/// Gaussian reflection line: `peak·exp(−(λ−λB)²/(2σ²))`, zero phase.
pub fn fbg_reflectivity(g: &Fbg, probe_wavelength: f64) -> Complex64 {
    let d = (probe_wavelength - g.bragg_wavelength) / g.spectral_sigma;
    Complex64::new(g.peak_amplitude * (-0.5 * d * d).exp(), 0.0)
}

/// Layout of a grating array with a sinusoidal Bragg-wavelength ripple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbgArraySpec {
    pub count: usize,
    pub spacing: f64,
    pub start: f64,
    pub base_wavelength: f64,
    pub variation_amplitude: f64,
    /// Ripple period in gratings.
    pub variation_period: f64,
    pub sigma: f64,
    pub peak_amplitude: f64,
}

/// Grating `k` sits at `start + k·spacing` with
/// `λB(k) = λ0 + A·sin(2πk/P)`.
pub fn build_fbg_array(spec: &FbgArraySpec, fiber_length: f64) -> Result<Vec<Fbg>> {
    if spec.count == 0 || !(spec.spacing > 0.0) {
        return Err(Error::InvalidInput(
            "grating array needs count ≥ 1 and spacing > 0".into(),
        ));
    }
    if !(spec.sigma > 0.0) {
        return Err(Error::InvalidInput("grating spectral sigma must be > 0".into()));
    }
    if !(spec.variation_period > 0.0) {
        return Err(Error::InvalidInput("variation period must be > 0".into()));
    }
    let end = spec.start + (spec.count - 1) as f64 * spec.spacing;
    if spec.start < 0.0 || end > fiber_length {
        return Err(Error::InvalidInput(format!(
            "grating array [{}, {end}] m exceeds the fiber length {fiber_length} m",
            spec.start
        )));
    }
    Ok((0..spec.count)
        .map(|k| {
            let phase = std::f64::consts::TAU * k as f64 / spec.variation_period;
            Fbg {
                position: spec.start + k as f64 * spec.spacing,
                bragg_wavelength: spec.base_wavelength + spec.variation_amplitude * phase.sin(),
                spectral_sigma: spec.sigma,
                peak_amplitude: spec.peak_amplitude,
            }
        })
        .collect())
}

/// Random Rayleigh scatterers: uniform positions, circular complex Gaussian
/// reflectivity with `E|r|² = mean_amplitude²`. Sorted by position.
pub fn generate_scatterers(
    length: f64,
    density: f64,
    mean_amplitude: f64,
    seed: u64,
) -> Result<Vec<Scatterer>> {
    if !(density > 0.0) || !(length >= 0.0) {
        return Err(Error::InvalidInput(
            "scatterer density must be > 0 and length ≥ 0".into(),
        ));
    }
    let expected = density * length;
    if expected > MAX_SCATTERERS {
        return Err(Error::Size(format!(
            "{expected:.3e} scatterers requested, limit is {MAX_SCATTERERS:.0e}"
        )));
    }
    let count = expected.round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = mean_amplitude / std::f64::consts::SQRT_2;
    let mut out: Vec<Scatterer> = (0..count)
        .map(|_| {
            let position = rng.random::<f64>() * length;
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Scatterer {
                position,
                reflectivity: Complex64::new(re * scale, im * scale),
            }
        })
        // |r| = 0 has probability zero but would violate the invariant.
        .filter(|s| s.reflectivity.norm_sqr() > 0.0)
        .collect();
    out.sort_by(|a, b| a.position.total_cmp(&b.position));
    Ok(out)
}

/// A Jones vector `(x, y)`, unit norm.
pub type Jones = [Complex64; 2];

/// Slowly varying polarization state of the back-scattered light along the
/// fiber. Scatterers within one resolution cell share (almost) the same state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationField {
    spacing: f64,
    knots: Vec<Jones>,
}

impl PolarizationField {
    /// Every element reflects into the same state.
    pub fn uniform(jones: Jones) -> Self {
        let norm = (jones[0].norm_sqr() + jones[1].norm_sqr()).sqrt();
        let j = if norm > 0.0 {
            [jones[0] / norm, jones[1] / norm]
        } else {
            [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
        };
        PolarizationField {
            spacing: f64::INFINITY,
            knots: vec![j],
        }
    }

    /// Random states drawn uniformly on the Poincaré sphere every
    /// `correlation_length` meters and interpolated in between.
    pub fn random(length: f64, correlation_length: f64, seed: u64) -> Result<Self> {
        if !(correlation_length > 0.0) {
            return Err(Error::InvalidInput(
                "polarization correlation length must be > 0".into(),
            ));
        }
        let n = (length / correlation_length).ceil() as usize + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
        let mut knots: Vec<Jones> = Vec::with_capacity(n);
        for _ in 0..n {
            let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut j = [
                Complex64::new(v[0] / norm, v[1] / norm),
                Complex64::new(v[2] / norm, v[3] / norm),
            ];
            // Remove the global phase jump to the previous knot so that the
            // interpolated vector never passes near zero.
            if let Some(prev) = knots.last() {
                let overlap = prev[0].conj() * j[0] + prev[1].conj() * j[1];
                if overlap.norm() > 0.0 {
                    let rot = overlap.conj() / overlap.norm();
                    j = [j[0] * rot, j[1] * rot];
                }
            }
            knots.push(j);
        }
        Ok(PolarizationField {
            spacing: correlation_length,
            knots,
        })
    }

    pub fn jones_at(&self, z: f64) -> Jones {
        if self.knots.len() == 1 || !self.spacing.is_finite() {
            return self.knots[0];
        }
        let u = (z / self.spacing).max(0.0);
        let i = (u.floor() as usize).min(self.knots.len() - 2);
        let s = (u - i as f64).clamp(0.0, 1.0);
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let j = [a[0] * (1.0 - s) + b[0] * s, a[1] * (1.0 - s) + b[1] * s];
        let norm = (j[0].norm_sqr() + j[1].norm_sqr()).sqrt();
        [j[0] / norm, j[1] / norm]
    }
}

impl Default for PolarizationField {
    fn default() -> Self {
        PolarizationField::uniform([Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Scatterer,
    Reflector,
    Fbg,
}

/// One reflecting element as seen by a probe at a particular wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub position: f64,
    /// Field reflectivity at the probe wavelength, before propagation loss.
    pub reflectivity: Complex64,
    pub kind: ElementKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberModel {
    pub length: f64,
    pub group_index: f64,
    /// dB/km, one way.
    pub attenuation: f64,
    /// Nominal operating wavelength, m.
    pub wavelength: f64,
    pub scatterers: Vec<Scatterer>,
    pub reflectors: Vec<PointReflector>,
    pub fbgs: Vec<Fbg>,
    pub polarization: PolarizationField,
}

impl FiberModel {
    pub fn new(length: f64, group_index: f64, attenuation: f64, wavelength: f64) -> Result<Self> {
        let model = FiberModel {
            length,
            group_index,
            attenuation,
            wavelength,
            scatterers: Vec::new(),
            reflectors: Vec::new(),
            fbgs: Vec::new(),
            polarization: PolarizationField::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "fiber length must be > 0, got {}",
                self.length
            )));
        }
        if !(1.4..=1.6).contains(&self.group_index) {
            return Err(Error::InvalidInput(format!(
                "group index {} outside [1.4, 1.6]",
                self.group_index
            )));
        }
        if !(self.attenuation >= 0.0) {
            return Err(Error::InvalidInput("attenuation must be ≥ 0".into()));
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::InvalidInput("wavelength must be > 0".into()));
        }
        let inside = |z: f64| (0.0..=self.length).contains(&z);
        if let Some(s) = self.scatterers.iter().find(|s| !inside(s.position)) {
            return Err(Error::InvalidInput(format!(
                "scatterer at {} m outside the fiber",
                s.position
            )));
        }
        if let Some(r) = self.reflectors.iter().find(|r| !inside(r.position)) {
            return Err(Error::InvalidInput(format!(
                "reflector at {} m outside the fiber",
                r.position
            )));
        }
        if let Some(g) = self.fbgs.iter().find(|g| !inside(g.position)) {
            return Err(Error::InvalidInput(format!(
                "grating at {} m outside the fiber",
                g.position
            )));
        }
        Ok(())
    }

    pub fn with_scatterers(mut self, scatterers: Vec<Scatterer>) -> Result<Self> {
        self.scatterers = scatterers;
        self.validate()?;
        Ok(self)
    }

    pub fn with_fbgs(mut self, fbgs: Vec<Fbg>) -> Result<Self> {
        self.fbgs = fbgs;
        self.validate()?;
        Ok(self)
    }

    pub fn with_polarization(mut self, polarization: PolarizationField) -> Self {
        self.polarization = polarization;
        self
    }

    /// Appends a discrete reflector, e.g. a connector.
    pub fn add_point_reflector(mut self, position: f64, power_reflectivity: f64) -> Result<Self> {
        if !(0.0..=self.length).contains(&position) {
            return Err(Error::InvalidInput(format!(
                "reflector position {position} m outside [0, {}] m",
                self.length
            )));
        }
        if power_reflectivity > 0.0 {
            return Err(Error::InvalidInput(format!(
                "power reflectivity {power_reflectivity} dB must be ≤ 0 dB"
            )));
        }
        self.reflectors.push(PointReflector {
            position,
            power_reflectivity,
        });
        Ok(self)
    }

    /// Number of elements returned by [`elements`](Self::elements).
    pub fn element_count(&self) -> usize {
        self.scatterers.len() + self.reflectors.len() + self.fbgs.len()
    }

    /// All reflecting elements at `probe_wavelength`: scatterers, then
    /// reflectors, then gratings.
    pub fn elements(&self, probe_wavelength: f64) -> impl Iterator<Item = Element> + '_ {
        let scat = self.scatterers.iter().map(|s| Element {
            position: s.position,
            reflectivity: s.reflectivity,
            kind: ElementKind::Scatterer,
        });
        let refl = self.reflectors.iter().map(|r| Element {
            position: r.position,
            reflectivity: Complex64::new(r.amplitude(), 0.0),
            kind: ElementKind::Reflector,
        });
        let fbg = self.fbgs.iter().map(move |g| Element {
            position: g.position,
            reflectivity: fbg_reflectivity(g, probe_wavelength),
            kind: ElementKind::Fbg,
        });
        scat.chain(refl).chain(fbg)
    }

    /// Field loss factor for the round trip to `z`.
    pub fn round_trip_field_loss(&self, z: f64) -> f64 {
        10f64.powf(-2.0 * self.attenuation * z / 1000.0 / 20.0)
    }
}

/// Whether a phase change is counted for one pass through the fiber or for
/// the full round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseConvention {
    #[default]
    SinglePass,
    DoublePass,
}

impl PhaseConvention {
    /// Multiplier on `2π/λ · ΔOPL`.
    pub fn factor(self) -> f64 {
        match self {
            PhaseConvention::SinglePass => 1.0,
            PhaseConvention::DoublePass => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingConstants {
    pub strain_optic_factor: f64,
    pub convention: PhaseConvention,
}

impl Default for SensingConstants {
    fn default() -> Self {
        SensingConstants {
            strain_optic_factor: DEFAULT_STRAIN_OPTIC_FACTOR,
            convention: PhaseConvention::SinglePass,
        }
    }
}

impl SensingConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.strain_optic_factor > 0.0 && self.strain_optic_factor <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "strain-optic factor {} outside (0, 1]",
                self.strain_optic_factor
            )));
        }
        Ok(())
    }
}

/// Piecewise-linear function of time, held constant outside its breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("profile needs at least one point".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidInput(
                "profile times must be strictly increasing".into(),
            ));
        }
        Ok(PiecewiseLinear { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        match p.iter().position(|&(ti, _)| ti > t) {
            None => p[p.len() - 1].1,
            Some(i) => {
                let (t0, v0) = p[i - 1];
                let (t1, v1) = p[i];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Response of `y' = (u − y)/τ` driven by this profile, starting in
    /// steady state. Exact for piecewise-linear input.
    pub fn low_pass(&self, tau: f64, t: f64) -> f64 {
        if tau <= 0.0 {
            return self.eval(t);
        }
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        let mut y = p[0].1;
        for w in p.windows(2) {
            let (t0, v0) = w[0];
            let (t1, v1) = w[1];
            let slope = (v1 - v0) / (t1 - t0);
            let end = t.min(t1);
            let dt = end - t0;
            let u_end = v0 + slope * dt;
            y = u_end - slope * tau + (y - v0 + slope * tau) * (-dt / tau).exp();
            if t <= t1 {
                return y;
            }
        }
        // Held constant after the last breakpoint.
        let (tl, vl) = p[p.len() - 1];
        vl + (y - vl) * (-(t - tl) / tau).exp()
    }
}

/// A time-varying perturbation applied to the span `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvironmentEvent {
    /// Sinusoidal elongation of the span by `amplitude·sin(2πft + phase)` meters.
    StrainTone {
        span: (f64, f64),
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// Temperature excursion `ΔT(t)` (K) applied to the span; the core
    /// follows through a first-order lag with time constant `tau`.
    TemperatureProfile {
        span: (f64, f64),
        delta_t: PiecewiseLinear,
        dn_dt: f64,
        tau: f64,
    },
}

impl EnvironmentEvent {
    pub fn span(&self) -> (f64, f64) {
        match self {
            EnvironmentEvent::StrainTone { span, .. }
            | EnvironmentEvent::TemperatureProfile { span, .. } => *span,
        }
    }

    pub fn validate(&self, fiber_length: f64) -> Result<()> {
        let (a, b) = self.span();
        if !(0.0 <= a && a < b && b <= fiber_length) {
            return Err(Error::InvalidInput(format!(
                "event span [{a}, {b}] m not inside the fiber [0, {fiber_length}] m"
            )));
        }
        match self {
            EnvironmentEvent::StrainTone { frequency, .. } if !(*frequency >= 0.0) => Err(
                Error::InvalidInput(format!("tone frequency {frequency} Hz must be ≥ 0")),
            ),
            EnvironmentEvent::TemperatureProfile { tau, .. } if !(*tau >= 0.0) => Err(
                Error::InvalidInput(format!("thermal time constant {tau} s must be ≥ 0")),
            ),
            _ => Ok(()),
        }
    }

    /// Time-dependent factor of the path change; multiply by
    /// [`spatial_weight`](Self::spatial_weight) to get ΔOPL in meters.
    pub fn time_coefficient(&self, t: f64, group_index: f64, constants: &SensingConstants) -> f64 {
        match self {
            EnvironmentEvent::StrainTone {
                amplitude,
                frequency,
                phase,
                ..
            } => {
                group_index
                    * constants.strain_optic_factor
                    * amplitude
                    * (std::f64::consts::TAU * frequency * t + phase).sin()
            }
            EnvironmentEvent::TemperatureProfile {
                delta_t, dn_dt, tau, ..
            } => dn_dt * delta_t.low_pass(*tau, t),
        }
    }

    /// Position-dependent factor: the fraction of the span behind `z` for a
    /// strain tone, the heated length behind `z` for a temperature event.
    /// Zero upstream of the span and saturated beyond it.
    pub fn spatial_weight(&self, z: f64) -> f64 {
        let (a, b) = self.span();
        let overlap = (z - a).clamp(0.0, b - a);
        match self {
            EnvironmentEvent::StrainTone { .. } => overlap / (b - a),
            EnvironmentEvent::TemperatureProfile { .. } => overlap,
        }
    }

    /// Spatial weight for every position downstream of the span.
    pub fn full_weight(&self) -> f64 {
        let (a, b) = self.span();
        self.spatial_weight(b.max(a))
    }
}

/// Optical path change at position `z` and time `t`, summed over events.
pub fn delta_opl(
    events: &[EnvironmentEvent],
    group_index: f64,
    constants: &SensingConstants,
    z: f64,
    t: f64,
) -> f64 {
    events
        .iter()
        .map(|e| e.time_coefficient(t, group_index, constants) * e.spatial_weight(z))
        .sum()
}

/// ΔOPL for every element of `model` (order of [`FiberModel::elements`]).
pub fn apply_environment(
    model: &FiberModel,
    events: &[EnvironmentEvent],
    constants: &SensingConstants,
    t: f64,
) -> Vec<f64> {
    let coeffs: Vec<f64> = events
        .iter()
        .map(|e| e.time_coefficient(t, model.group_index, constants))
        .collect();
    model
        .elements(model.wavelength)
        .map(|el| {
            events
                .iter()
                .zip(&coeffs)
                .map(|(e, c)| c * e.spatial_weight(el.position))
                .sum()
        })
        .collect()
}
