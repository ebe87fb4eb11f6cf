//! Distributed event-triggered feedback optimization for encircling a target
//! with a team of heterogeneous robots.
//!
//! Each robot runs a local gradient flow on a reference `u_i` that its
//! stabilized plant tracks, while two dynamic-average trackers estimate the
//! team's mean bearing `σ` and the mean of `∇₂ℓ`. Tracker values are only
//! exchanged when a local trigger condition fires.

pub mod bench;
pub mod controller;
pub mod costs;
pub mod graph;
pub mod plants;
pub mod safety;
pub mod sim;
pub mod trace;

pub type Vec2 = nalgebra::Vector2<f64>;

pub use controller::{AlgoParams, ControllerState};
pub use costs::Scenario;
pub use graph::{generate_er, CommGraph};
pub use plants::{PlantModel, PlantState};
pub use safety::SafetyConfig;
pub use sim::{run_continuous_baseline, run_trial, SimConfig, TrialResult, TrialSetup};
