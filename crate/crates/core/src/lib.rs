//! Zero-temperature Glauber (majority) dynamics on finite windows of `Z^d`
//! with frozen vertices, bootstrap percolation, and the box renormalization
//! used to bound clusters of fixed-minus sites and flippers.

pub mod analysis;
pub mod bootstrap;
pub mod dynamics;
pub mod environment;
mod error;
pub mod io;
pub mod lattice;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
