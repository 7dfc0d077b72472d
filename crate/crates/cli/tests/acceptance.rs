//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Criteria 4-6 run the shipped scenario files in `scenarios/`.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use ccotdr_cli::pipeline::{run, Analysis};
use ccotdr_cli::scenario::Scenario;
use ccotdr_core::dsp::{
    differential_phase, linear_fit, phase_to_strain, resolves_two_points, strain_to_phase, to_db,
    unwrap, wrap,
};
use ccotdr_core::fibermodel::generate_scatterers;
use ccotdr_core::probe::{
    build_frame, golay_pair, required_zero_pad, spatial_resolution, summed_autocorrelation, Which,
};
use ccotdr_core::{
    compress_shot, golay_compress, stack_waterfall, CompressedProfile, Correlator,
    EnvironmentEvent, FiberModel, LaserModel, NoiseModel, SensingConstants, ShotSimulator,
};
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NG: f64 = 1.468;
const LAMBDA: f64 = 1550e-9;

// Pinned tolerances.
const GOLAY_MAX_ORDER: u32 = 14;
const GOLAY_LIMIT: Duration = Duration::from_secs(5);
const RESOLUTION_EXPECTED: f64 = 0.0204;
const RESOLUTION_TOL: f64 = 5e-5;
const RESOLUTION_LIMIT: Duration = Duration::from_secs(60);
const STRAIN_PHASE_EXPECTED: f64 = 4.70;
const STRAIN_PHASE_TOL: f64 = 0.05;
const ACOUSTIC_TONE: (f64, f64) = (120.0, 1.0);
const ACOUSTIC_LOCATION: (f64, f64) = (216.0, 2.0);
const CHANGE_RATIO_MIN: f64 = 5.0;
const THERMAL_TONE: (f64, f64) = (400.0, 2.0);
const DN_DT: (f64, f64) = (1e-5, 0.10);
const CHAMBER_RMSE_MAX: f64 = 0.3;
const PERIODICITY: (f64, f64) = (10.0, 0.2);
const PEAKS_IN_WINDOW: (usize, usize) = (39, 40);
const SCENARIO_LIMIT: Duration = Duration::from_secs(300);
const FFT_REL_TOL: f64 = 1e-9;
const RAYLEIGH_CV: (f64, f64) = (1.0, 0.1);
const STRAIN_ROUND_TRIP_TOL: f64 = 0.05;
const ATTENUATION_TOL: f64 = 0.10;
const BENCH_SYMBOLS: usize = 4096;
const BENCH_SHOTS: usize = 1000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn scenario(name: &str, overrides: &[&str]) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.cfg"));
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Scenario::load(&path, &overrides).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn within(v: f64, (center, tol): (f64, f64)) -> bool {
    (v - center).abs() <= tol
}

/// Pair simulator plus correlators; A and B fire at the same instant.
struct Rig {
    sim: ShotSimulator,
    corr: [Correlator<f32>; 2],
}

impl Rig {
    fn new(model: &FiberModel, order: u32, sps: usize, rate: f64, events: &[EnvironmentEvent], linewidth: f64) -> Self {
        let pair = golay_pair(order).unwrap();
        let pad = required_zero_pad(model.length, NG, rate);
        let laser = LaserModel {
            wavelength: LAMBDA,
            linewidth,
            seed: 1,
        };
        let sim = ShotSimulator::for_pair(
            model,
            &pair,
            sps,
            pad,
            rate,
            events,
            &SensingConstants::default(),
            &laser,
            &NoiseModel::off(),
        )
        .unwrap();
        let corr = |w| {
            let f = sim.frame(w).unwrap();
            Correlator::new(&f.reference(), f.len_samples()).unwrap()
        };
        let corr = [corr(Which::A), corr(Which::B)];
        Rig { sim, corr }
    }

    fn profile(&self, t: f64, seed: u64) -> CompressedProfile {
        let a = self.sim.simulate(Which::A, t, seed).unwrap();
        let b = self.sim.simulate(Which::B, t, seed ^ 1).unwrap();
        golay_compress(
            &compress_shot(&a, &self.corr[0], NG).unwrap(),
            &compress_shot(&b, &self.corr[1], NG).unwrap(),
        )
        .unwrap()
    }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut bad = Vec::new();
    for order in 1..=GOLAY_MAX_ORDER {
        let pair = golay_pair(order).unwrap();
        let acf = summed_autocorrelation(pair.seq_a(), pair.seq_b());
        if acf[0] != 2 * pair.len() as i64 || acf[1..].iter().any(|&v| v != 0) {
            bad.push(order);
        }
    }
    let took = start.elapsed();
    verdict(
        bad.is_empty() && took < GOLAY_LIMIT,
        format!("orders 1-{GOLAY_MAX_ORDER} nonzero sidelobes in {bad:?}, {:.2} s (limit 5 s)", took.as_secs_f64()),
    )
}

fn two_reflectors(sep: f64) -> bool {
    let z1 = 2.5;
    let m = FiberModel::new(5.0, NG, 0.2, LAMBDA)
        .unwrap()
        .add_point_reflector(z1, -30.0)
        .unwrap()
        .add_point_reflector(z1 + sep, -30.0)
        .unwrap();
    let p = Rig::new(&m, 11, 4, 5e9, &[], 0.0).profile(0.0, 1);
    let db: Vec<f64> = p.power().into_iter().map(to_db).collect();
    resolves_two_points(&db, p.position_step, p.origin, z1, z1 + sep, 3.0)
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let dz = spatial_resolution(5e9, NG);
    let at3 = two_reflectors(0.03);
    let at1 = two_reflectors(0.01);
    let took = start.elapsed();
    verdict(
        (dz - RESOLUTION_EXPECTED).abs() <= RESOLUTION_TOL && at3 && !at1 && took < RESOLUTION_LIMIT,
        format!(
            "dz={dz:.5} m (0.0204 ± 5e-5), 3 cm resolved={at3}, 1 cm resolved={at1}, {:.1} s (limit 60 s)",
            took.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Verdict {
    let phi = strain_to_phase(1e-6, 1.0, &SensingConstants::default(), LAMBDA, NG);
    verdict(
        (phi - STRAIN_PHASE_EXPECTED).abs() <= STRAIN_PHASE_TOL,
        format!("1 µε over 1 m = {phi:.4} rad (4.70 ± 0.05, single_pass)"),
    )
}

fn run_scenario(name: &str, overrides: &[&str]) -> (Analysis, Duration) {
    let scn = scenario(name, overrides);
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let s = run(&scn, dir.path(), None).unwrap_or_else(|e| panic!("{name}: {e}"));
    (s.analysis, start.elapsed())
}

fn criterion_4() -> Verdict {
    let (noisy, t1) = run_scenario("acoustic", &[]);
    let (clean, t2) = run_scenario("acoustic", &["noise.enabled=false", "laser.linewidth=0"]);
    let (Analysis::Acoustic(a), Analysis::Acoustic(c)) = (noisy, clean) else {
        unreachable!()
    };
    let f = a.tone.map_or(f64::NAN, |t| t.frequency);
    let z = a.location.unwrap_or(f64::NAN);
    let pass = within(f, ACOUSTIC_TONE)
        && within(z, ACOUSTIC_LOCATION)
        && c.change_ratio >= CHANGE_RATIO_MIN
        && t1 < SCENARIO_LIMIT
        && t2 < SCENARIO_LIMIT;
    verdict(
        pass,
        format!(
            "tone {f:.3} Hz (120 ± 1), location {z:.2} m (216 ± 2), noiseless change ratio {:.2} (≥ 5), {:.1} s + {:.1} s (limit 300 s each)",
            c.change_ratio,
            t1.as_secs_f64(),
            t2.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Verdict {
    let (a, took) = run_scenario("thermal", &[]);
    let Analysis::Thermal(t) = a else { unreachable!() };
    let f = t.tone.map_or(f64::NAN, |t| t.frequency);
    let dn_ok = ((t.dn_dt_estimate - DN_DT.0) / DN_DT.0).abs() <= DN_DT.1;
    let pass = within(f, THERMAL_TONE) && dn_ok && t.chamber_rmse <= CHAMBER_RMSE_MAX && took < SCENARIO_LIMIT;
    verdict(
        pass,
        format!(
            "tone {f:.3} Hz (400 ± 2), dn/dT {:.4e} (1e-5 ± 10%), chamber RMSE {:.3} K (≤ 0.3 after 3τ), {:.1} s (limit 300 s)",
            t.dn_dt_estimate,
            t.chamber_rmse,
            took.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Verdict {
    let (a, took) = run_scenario("fbg", &[]);
    let Analysis::Fbg(f) = a else { unreachable!() };
    let period = f.periodicity.unwrap_or(f64::NAN);
    let pass = f.gratings == 200
        && f.unresolved_pairs == 0
        && f.max_bragg_error <= f.sweep_step / 2.0
        && within(period, PERIODICITY)
        && (PEAKS_IN_WINDOW.0..=PEAKS_IN_WINDOW.1).contains(&f.peaks_in_window)
        && took < SCENARIO_LIMIT;
    verdict(
        pass,
        format!(
            "{} gratings, {} unresolved pairs, max Bragg error {:.2} pm (≤ {:.1} pm), period {period:.3} (10 ± 0.2), {} peaks in 2 m (39-40), {:.1} s",
            f.gratings,
            f.unresolved_pairs,
            f.max_bragg_error * 1e12,
            f.sweep_step / 2.0 * 1e12,
            f.peaks_in_window,
            took.as_secs_f64()
        ),
    )
}

fn fft_vs_direct(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = rng.random_range(1..128);
        let n = m + rng.random_range(0..512);
        let reference: Vec<f64> = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let x: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let fast = Correlator::<f64>::new(&reference, n).unwrap().correlate(&x).unwrap();
        let e = m as f64;
        let slow: Vec<Complex64> = (0..=n - m)
            .map(|k| (0..m).map(|j| x[k + j] * reference[j]).sum::<Complex64>() / e)
            .collect();
        let scale = slow.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).norm() / scale);
        }
    }
    worst
}

fn linearity_and_determinism() -> (f64, bool) {
    let all = generate_scatterers(40.0, 20.0, 1e-3, 9).unwrap();
    let half: Vec<_> = all.iter().step_by(2).copied().collect();
    let rest: Vec<_> = all.iter().skip(1).step_by(2).copied().collect();
    let shot = |s: Vec<ccotdr_core::Scatterer>| {
        let m = FiberModel::new(40.0, NG, 0.2, LAMBDA).unwrap().with_scatterers(s).unwrap();
        Rig::new(&m, 6, 2, 1e9, &[], 0.0).sim.simulate(Which::A, 0.0, 3).unwrap()
    };
    let (full, a, b) = (shot(all.clone()), shot(half), shot(rest));
    let scale = full.iq_x.iter().map(|v| v.norm()).fold(0.0f32, f32::max);
    let err = full
        .iq_x
        .iter()
        .zip(a.iq_x.iter().zip(&b.iq_x))
        .map(|(f, (x, y)): (&Complex32, (&Complex32, &Complex32))| (f - (x + y)).norm() / scale)
        .fold(0.0f32, f32::max) as f64;
    let again = shot(all);
    (err, again == full)
}

fn rayleigh_cv() -> f64 {
    let mut cvs = Vec::new();
    for seed in 0..4 {
        let m = FiberModel::new(2000.0, NG, 0.0, LAMBDA)
            .unwrap()
            .with_scatterers(generate_scatterers(2000.0, 50.0, 1e-3, seed).unwrap())
            .unwrap();
        let p = Rig::new(&m, 7, 2, 1e8, &[], 0.0).profile(0.0, seed).power();
        let v = &p[p.len() / 20..p.len() - p.len() / 20];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        cvs.push(var.sqrt() / mean);
    }
    cvs.iter().sum::<f64>() / cvs.len() as f64
}

fn unwrap_round_trip(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut truth = vec![rng.random_range(-20.0..20.0)];
        for _ in 0..500 {
            let step: f64 = rng.random_range(-3.0..3.0);
            truth.push(truth.last().unwrap() + step);
        }
        let back = unwrap(&truth.iter().map(|&v| wrap(v)).collect::<Vec<_>>());
        let offset = back[0] - truth[0];
        for (b, t) in back.iter().zip(&truth) {
            worst = worst.max((b - t - offset).abs());
        }
    }
    worst
}

fn strain_round_trip() -> f64 {
    let mut worst = 0.0f64;
    for micro in [0.01, 0.1, 1.0, 2.5, 5.0] {
        let strain = micro * 1e-6;
        let m = FiberModel::new(12.0, NG, 0.2, LAMBDA)
            .unwrap()
            .add_point_reflector(4.0, -20.0)
            .unwrap()
            .add_point_reflector(7.0, -20.0)
            .unwrap();
        let ev = [EnvironmentEvent::StrainTone {
            span: (5.0, 6.0),
            amplitude: strain,
            frequency: 1.0,
            phase: 0.0,
        }];
        let rig = Rig::new(&m, 5, 2, 1e9, &ev, 0.0);
        let rows = 200;
        let w = stack_waterfall(
            (0..rows)
                .map(|k| rig.profile(0.25 * k as f64 / (rows - 1) as f64, k as u64))
                .collect(),
        )
        .unwrap();
        let p = differential_phase(&w, 4.0, 7.0).unwrap();
        let back = phase_to_strain(p.values[rows - 1] - p.values[0], 1.0, &SensingConstants::default(), LAMBDA, NG).unwrap();
        worst = worst.max((back / strain - 1.0).abs());
    }
    worst
}

fn attenuation_slope() -> f64 {
    let alpha = 1.0;
    let m = FiberModel::new(10_000.0, NG, alpha, LAMBDA)
        .unwrap()
        .with_scatterers(generate_scatterers(10_000.0, 5.0, 1e-3, 21).unwrap())
        .unwrap();
    let p = Rig::new(&m, 7, 2, 1e8, &[], 0.0).profile(0.0, 5);
    let (z, db): (Vec<f64>, Vec<f64>) = p
        .power()
        .iter()
        .enumerate()
        .filter(|&(i, _)| p.position(i) > 100.0 && p.position(i) < 9_900.0)
        .map(|(i, &v)| (p.position(i) / 1000.0, to_db(v)))
        .unzip();
    -linear_fit(&z, &db).1 / (2.0 * alpha)
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let fft = fft_vs_direct(&mut rng);
    let (lin, det) = linearity_and_determinism();
    let cv = rayleigh_cv();
    let unw = unwrap_round_trip(&mut rng);
    let strain = strain_round_trip();
    let att = attenuation_slope();
    let pass = fft <= FFT_REL_TOL
        && lin <= 1e-5
        && det
        && within(cv, RAYLEIGH_CV)
        && unw <= 1e-9
        && strain <= STRAIN_ROUND_TRIP_TOL
        && (att - 1.0).abs() <= ATTENUATION_TOL;
    verdict(
        pass,
        format!(
            "fft/direct {fft:.1e} (≤ 1e-9), linearity {lin:.1e}, deterministic={det}, Rayleigh CV {cv:.3} (1 ± 0.1), unwrap {unw:.1e}, strain {:.3}% (≤ 5%), attenuation slope/2α {att:.3} (1 ± 0.1)",
            strain * 100.0
        ),
    )
}

fn criterion_8() -> Verdict {
    let pair = golay_pair(11).unwrap();
    let frame = build_frame(&pair, Which::A, 2, BENCH_SYMBOLS - pair.len(), 1e9).unwrap();
    let n = frame.len_samples();
    let corr = Correlator::<f32>::new(&frame.reference(), n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shot: Vec<Complex32> = (0..n)
        .map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let mut out = vec![Complex32::default(); corr.output_len()];
    let mut scratch = vec![Complex32::default(); corr.scratch_len()];
    let start = Instant::now();
    for _ in 0..BENCH_SHOTS {
        corr.correlate_into(&shot, &mut out, &mut scratch).unwrap();
    }
    let took = start.elapsed().as_secs_f64();
    let rate = (BENCH_SHOTS * n) as f64 / took;
    verdict(
        true,
        format!(
            "{:.3e} samples/s, single thread ({BENCH_SHOTS} shots of {BENCH_SYMBOLS} symbols at sps 2, FFT {}; reported, no threshold)",
            rate,
            corr.fft_len()
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; a filter that excludes this target
    // shows up as a positional argument.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }
    let criteria: [(u32, fn() -> Verdict); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        let v = check();
        println!("criterion {n}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
