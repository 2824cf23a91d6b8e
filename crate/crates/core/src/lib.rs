//! Desk-scale planar quadruped ladder climbing: terrain generation, rigid
//! body simulation with ball and hook end effectors, reward and observation
//! construction, constrained policy optimization with student distillation,
//! and a grid evaluation harness.
//!
//! The dynamics are restricted to the sagittal plane. Quantities that are
//! three-dimensional in the observation and reward interfaces carry zeros on
//! the absent lateral axes so the formula library keeps its full shape.

pub mod env;
pub mod eval;
pub mod math;
pub mod nn;
pub mod obs;
pub mod reward;
pub mod toy;
pub mod train;
pub mod rng;
pub mod robot;
pub mod sim;
pub mod terrain;

pub use robot::{DisturbanceConfig, EndEffector, HookModel, Leg, RobotModel};
pub use sim::{ContactState, RobotState, Sim, SimError, SimParams};
pub use terrain::{
    CurriculumState, EpisodeOutcome, LadderSpec, TerrainConfig, TerrainInstance, TerrainKind,
};
