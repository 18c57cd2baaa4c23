//! Desk-scale computational ergodic theory for one-dimensional maps.

pub mod bc_induction;
pub mod combinatorics;
pub mod correlate;
pub mod folklore;
pub mod maps;
pub mod orbits;
pub mod paramex;
pub mod rng;
pub mod stats;
pub mod symbolic;
pub mod tower;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
