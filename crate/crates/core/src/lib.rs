//! Monte Carlo toolkit for growth-fragmentation branching processes and
//! their Malthusian spectral triple `(lambda, h, nu)`.

pub mod branching;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod model;
pub mod numerics;
pub mod observable;
pub mod par;
pub mod pdmp;
pub mod rng;
pub mod spectral;
pub mod spine;
pub mod stats;

pub use error::{Error, Result};
pub use model::ModelSpec;
