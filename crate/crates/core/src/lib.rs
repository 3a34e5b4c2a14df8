//! Stochastic abstractions of thermostatically controlled load populations.
//!
//! Single TCLs follow a switched linear diffusion with a hysteretic
//! thermostat. The crate builds finite Markov chain abstractions of that
//! process, propagates population occupancy through them, reduces the
//! resulting linear models, bounds the abstraction error, and closes the
//! loop with set-point based regulation.

pub mod aggregate;
pub mod baseline;
pub mod bounds;
pub mod chain;
pub mod control;
pub mod error;
pub mod gauss;
pub mod heterogeneity;
pub mod params;
pub mod partition;
pub mod reduction;
pub mod rng;
pub mod tcl;

pub use error::{Error, Result};
pub use params::{Mode, TclParams};
