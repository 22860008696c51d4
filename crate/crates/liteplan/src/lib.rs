//! Coarse-to-fine generative trajectory planning.
//!
//! The crate trains small diffusion / rectified-flow models over jumpy
//! state sequences and plans by progressive refinement: a coarse level
//! generates widely spaced key points, each following level refines only
//! the first interval of the previous plan, down to step resolution where
//! an inverse-dynamics model extracts the action.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod constants;
pub mod critic;
pub mod dataset;
pub mod env;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod prp;
pub mod schedule;

pub use error::{Error, Result};
