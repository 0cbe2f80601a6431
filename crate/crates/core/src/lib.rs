//! Scheduling control for treelike multiclass many-server queueing systems
//! in the Halfin-Whitt regime.

pub mod diffusion;
pub mod error;
pub mod flow;
pub mod fluid;
pub mod storage;
pub mod harness;
pub mod sim;
pub mod stats;
pub mod system;

pub use error::{Error, Result};
