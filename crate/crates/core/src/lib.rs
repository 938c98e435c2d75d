//! Quadrotor trajectory-tracking RL laboratory.
//!
//! The crate simulates a nano quadrotor at 100 Hz (rigid-body dynamics,
//! squared-speed propellers, first-order motors), wraps it in a trajectory
//! tracking MDP with collective-thrust/body-rate actions, and trains tracking
//! policies with a from-scratch PPO + MLP stack. Benchmarks report the mean
//! x-y Euclidean distance (MED) over four reference families: figure-eight,
//! random quintic polynomials, pentagram and random zigzag.

pub mod ablate;
pub mod bench;
pub mod ckpt;
pub mod config;
pub mod control;
pub mod env;
pub mod error;
pub mod nn;
pub mod ppo;
pub mod sim;
pub mod traj;

pub use config::{
    CtbrBounds, DrConfig, DrMode, EnvConfig, QuadrotorParams, RateControllerGains, RunConfig,
    SmoothnessKind, TrainConfig, GRAVITY,
};
pub use control::{clip_action, low_pass_filter, CtbrCommand, GeometricTracker, RateController};
pub use error::{Error, Result};
pub use sim::{hover_rotor_speed, propeller_wrench, state_derivative, step, QuadrotorState, Wrench};
pub use traj::{GeneratorSpec, ReferenceTrajectory, TrajectoryKind};
