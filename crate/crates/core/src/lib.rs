//! Analysis and simulation of continuous-time consensus protocols
//! `ẋ = g D(t) x + σ U(t) ẇ` on weighted directed and undirected networks.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod generators;
pub mod graph;
pub mod linalg;
pub mod pseudosim;
pub mod rng;
pub mod schedule;
pub mod spectral;
pub mod table;
pub mod verify;

pub use error::{Error, Result};
