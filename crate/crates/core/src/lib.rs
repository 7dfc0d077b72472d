//! Coherent correlation OTDR: probe codes, fiber and environment models,
//! shot simulation, pulse compression and phase-sensing analysis.

pub mod compress;
pub mod dsp;
pub mod error;
pub mod fibermodel;
pub mod probe;
pub mod sim;

/// Vacuum speed of light used throughout, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.9979e8;

pub use compress::{
    compress_shot, golay_compress, position_axis, position_to_index, roi_gate, stack_waterfall,
    xcorr, CompressedProfile, Correlator, Waterfall,
};
pub use error::{Error, Result};
pub use fibermodel::{
    EnvironmentEvent, FiberModel, PhaseConvention, PiecewiseLinear, PointReflector,
    PolarizationField, Scatterer, SensingConstants,
};
pub use probe::{build_frame, golay_pair, GolayPair, ProbeFrame, Which};
pub use sim::{Campaign, LaserModel, NoiseModel, PairTiming, Shot, ShotSimulator};
