//! Reachability analysis and attack synthesis for a single-machine
//! infinite-bus power system.

pub mod attack;
pub mod error;
pub mod grid;
pub mod hitl;
pub mod hjsolver;
pub mod plant;
pub mod reachability;

pub use error::{Error, Result};
