//! Inspection and maintenance planning for deteriorating structures as
//! discrete POMDPs.

pub mod builder;
pub mod container;
pub mod dbn;
pub mod error;
pub mod eval;
pub mod fatigue;
pub mod heuristics;
pub mod interchange;
pub mod pomdp;
pub mod rng;
pub mod solver;
pub mod toys;

pub use error::{Error, Result};
