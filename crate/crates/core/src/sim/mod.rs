//! Discrete-event simulation of the whole system.

pub mod event;
pub mod link;
pub mod radio;
pub mod traffic;
pub mod trace;
pub mod ue;
pub mod world;

pub use crate::dataplane::Mode;
pub use world::{run, run_with, RunError, RunOptions, RunOutput};
