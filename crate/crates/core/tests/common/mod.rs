#![allow(dead_code)]

use ccotdr_core::probe::{golay_pair, required_zero_pad, Which};
use ccotdr_core::{
    compress_shot, golay_compress, CompressedProfile, Correlator, EnvironmentEvent, FiberModel,
    LaserModel, NoiseModel, SensingConstants, ShotSimulator,
};

pub const LAMBDA: f64 = 1550e-9;
pub const NG: f64 = 1.468;

pub fn laser(linewidth: f64, seed: u64) -> LaserModel {
    LaserModel {
        wavelength: LAMBDA,
        linewidth,
        seed,
    }
}

/// Simulator plus matching correlators for one Golay pair.
pub struct Rig {
    pub sim: ShotSimulator,
    corr: [Correlator<f32>; 2],
}

impl Rig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &FiberModel,
        order: u32,
        sps: usize,
        symbol_rate: f64,
        events: &[EnvironmentEvent],
        laser: LaserModel,
        noise: NoiseModel,
    ) -> Self {
        let pair = golay_pair(order).unwrap();
        let pad = required_zero_pad(model.length, model.group_index, symbol_rate);
        let sim = ShotSimulator::for_pair(
            model,
            &pair,
            sps,
            pad,
            symbol_rate,
            events,
            &SensingConstants::default(),
            &laser,
            &noise,
        )
        .unwrap();
        let corr = |w| {
            let f = sim.frame(w).unwrap();
            Correlator::new(&f.reference(), f.len_samples()).unwrap()
        };
        let corr = [corr(Which::A), corr(Which::B)];
        Rig { sim, corr }
    }

    /// Golay-combined profile of a pair fired at `t`.
    pub fn profile(&self, t: f64, seed: u64) -> CompressedProfile {
        let a = self.sim.simulate(Which::A, t, seed).unwrap();
        let b = self.sim.simulate(Which::B, t, seed ^ 1).unwrap();
        let pa = compress_shot(&a, &self.corr[0], NG).unwrap();
        let pb = compress_shot(&b, &self.corr[1], NG).unwrap();
        golay_compress(&pa, &pb).unwrap()
    }
}
