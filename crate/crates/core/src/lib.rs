//! Option-indexed hierarchical RL workbench.
//!
//! A learned retrieval index maps an initial state to a small subset of a large
//! option library; a goal-conditioned A2C policy then acts over that subset.

pub mod a2c;
mod codec;
pub mod config;
pub mod craftworld;
pub mod domain;
pub mod env;
pub mod error;
pub mod harness;
pub mod index;
pub mod meta;
pub mod nn;
pub mod oracle;
pub mod seeding;
pub mod task;

pub use error::{Error, Result};
