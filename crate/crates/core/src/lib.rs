//! Model-predictive gait and foothold planning for bipeds.
//!
//! The crate covers the planning side of dynamic walking with a linear
//! inverted pendulum model: periodic gait references, a sparse ADMM solver
//! for the quadratic programs, branch-and-bound on top of it for foothold
//! region selection, receding-horizon planners for the base and foot-aware
//! modes, and a deterministic closed-loop simulator.
//!
//! Everything numeric is generic over the scalar type through [`Real`];
//! `f64` aliases are exported for the common case.

pub mod error;
pub mod geometry;
pub mod linalg;
pub mod lipm;
pub mod miqp;
pub mod planner;
pub mod qp;
mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` pendulum constants.
pub type LipmParams64 = lipm::LipmParams<f64>;
/// `f64` planar state.
pub type LipmState64 = lipm::LipmState<f64>;
/// `f64` one-axis periodic reference.
pub type PeriodicGaitRef64 = lipm::PeriodicGaitRef<f64>;
/// `f64` planner configuration.
pub type MpcConfig64 = planner::MpcConfig<f64>;
/// `f64` step schedule.
pub type StepSchedule64 = planner::StepSchedule<f64>;
/// `f64` receding-horizon planner.
pub type Planner64 = planner::Planner<f64>;
/// `f64` closed-loop scenario.
pub type Scenario64 = sim::Scenario<f64>;
/// `f64` scenario trace.
pub type PlanTrace64 = sim::PlanTrace<f64>;
/// `f64` scenario metrics.
pub type Metrics64 = sim::Metrics<f64>;
