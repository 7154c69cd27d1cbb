pub mod cli;
pub mod config;
pub mod energy;
pub mod eval;
pub mod error;
pub mod geometry;
pub mod manifest;
pub mod rig;
pub mod shape;
pub mod solver;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
