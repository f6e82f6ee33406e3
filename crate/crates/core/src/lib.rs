//! Skill-based reinforcement learning with learned guidance in continuous mazes.

pub mod agent;
pub mod data;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod maze;
pub mod nets;
pub mod render;
pub mod rng;
pub mod skills;

pub use error::{Error, Result};
