//! FastSLAM 1.0 and a swarm-refined, noise-adaptive FastSLAM variant for a
//! planar vehicle with a range-bearing sensor, plus the simulator and Monte
//! Carlo harness used to compare them.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anfis;
pub mod ekf;
pub mod error;
pub mod filter;
pub mod harness;
pub mod models;
pub mod pso;
pub mod sim;
pub mod types;

pub use error::{Result, SlamError};
pub use filter::{Estimate, FilterConfig, FilterState, StepReport, Variant};
pub use harness::{run_monte_carlo, AggregateReport, ExperimentConfig, RunSummary};
pub use sim::{Scenario, SimState};
pub use types::{
    wrap_angle, ControlInput, LandmarkEstimate, LandmarkId, LandmarkMap, Mat2, NoiseConfig, Observation, Particle,
    Pose, Vec2, VehicleParams,
};
