//! Interacting Multiple Model tracking of a maneuvering intruder with
//! conflict detection and tangent-geometry avoidance.

pub mod config;
pub mod conflict;
pub mod dynamics;
pub mod error;
pub mod imm;
pub mod io;
pub mod kalman;
pub mod selfcheck;
pub mod sim;

pub use error::{Error, Result};
