pub mod cli;
pub mod compound;
pub mod conv;
pub mod diagnostics;
pub mod error;
pub mod families;
pub mod grid;
pub mod lattice;
pub mod levy;
pub mod quad;
pub mod random_walk;

pub use error::{Error, Result};
pub use grid::{GridDistribution, GridMeasure, LocalMass, TailHint};
pub use lattice::{DeltaWindow, Lattice};
