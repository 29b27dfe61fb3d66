//! Dual-controller, write-protected memory-augmented networks for
//! sequence-to-sequence prediction over code sequences.

pub mod autodiff;
pub mod baseline;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod tasks;
