//! Antenna position optimization for multiuser downlinks with movable antennas.
//!
//! The crate maximizes the ergodic zero-forcing sum rate over antenna
//! positions using only statistical channel knowledge. It provides
//!
//! * [`channel`]: the field-response statistical channel model;
//! * [`zf`]: zero-forcing precoding and water-filling;
//! * [`grad_mc`] and [`grad_de`]: Monte-Carlo and deterministic-equivalent
//!   rate/gradient engines, unified by [`engine::RateEngine`];
//! * [`laga`]: the log-barrier gradient ascent optimizer;
//! * [`scenario`]: synthetic scenarios and experiment sweeps;
//! * [`validate`]: self-check suites used by the command-line tool.

// `!(x > 0.0)` is used on purpose: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod engine;
pub mod error;
pub mod grad_de;
pub mod grad_mc;
pub mod laga;
pub mod linalg;
pub mod rng;
pub mod scenario;
pub mod validate;
pub mod zf;

pub use channel::{AntennaLayout, Axis, ChannelSample, MovingRegion, StatisticalCsi, UserPaths, Wavevector};
pub use engine::{EngineKind, RateEngine, SamplingPolicy};
pub use error::{Error, Result};
pub use grad_de::DeSolution;
pub use grad_mc::RateGradient;
pub use laga::{LagaConfig, OptimizerTrace};
pub use rng::{Purpose, SeedTree};
pub use zf::{GramData, WaterFillResult};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/channel-model.md")]
    mod channel_model {}
    #[doc = include_str!("../../../book/src/water-filling.md")]
    mod water_filling {}
    #[doc = include_str!("../../../book/src/monte-carlo.md")]
    mod monte_carlo {}
    #[doc = include_str!("../../../book/src/deterministic-equivalent.md")]
    mod deterministic_equivalent {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
