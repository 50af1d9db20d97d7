//! Analysis and simulation of backoff schedules in saturated random access
//! networks: the decoupled fixed point, countdown moments and tail classes,
//! a slot-level simulator and empirical tail statistics.
//!
//! The analytic modules are generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix the scalar for common use. The simulator works in
//! integer time ticks with `f64` parameters.

pub mod backoff;
pub mod error;
pub mod fixedpoint;
pub mod moments;
pub mod scalar;
pub mod sim;
pub mod tailstats;

pub use backoff::{BackoffConfig, BackoffSpec, Family, GrowthClass, Window};
pub use error::{Error, Result};
pub use fixedpoint::{solve, sweep, FixedPointSolution, PhyParams, PhyProfile, RetryLimit};
pub use moments::{CountdownMoments, CountdownPmf, MomentValue, TailClass};
pub use scalar::Real;
pub use sim::{run, replicate, SimConfig, SimResult};
pub use tailstats::{FairnessReport, TailFit};

pub type BackoffSpecF64 = BackoffSpec<f64>;
pub type BackoffSpecF32 = BackoffSpec<f32>;
pub type PhyProfileF64 = PhyProfile<f64>;
pub type PhyProfileF32 = PhyProfile<f32>;
pub type FixedPointSolutionF64 = FixedPointSolution<f64>;
pub type FixedPointSolutionF32 = FixedPointSolution<f32>;
pub type CountdownPmfF64 = CountdownPmf<f64>;
pub type CountdownPmfF32 = CountdownPmf<f32>;
pub type TailFitF64 = TailFit<f64>;
pub type TailFitF32 = TailFit<f32>;
