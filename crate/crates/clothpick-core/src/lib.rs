//! Desk-scale fabric-flattening laboratory.
//!
//! A mass-spring cloth simulator with a pick-and-place primitive, a latent
//! dynamics model (recurrent state space model) trained from offline
//! trajectories, a cloth-mask-constrained CEM planner, scripted data
//! collection, and an evaluation harness reporting normalised coverage and
//! normalised improvement across difficulty tiers.

pub mod config;
pub mod datagen;
pub mod env;
pub mod error;
pub mod eval;
pub mod planner;
pub mod rng;
pub mod rssm;
pub mod sim;

pub use error::{Error, Result};
