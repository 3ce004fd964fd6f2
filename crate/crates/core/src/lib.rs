//! Differential testing of automatic differentiation.
//!
//! A small tensor kernel with reverse-mode, forward-mode and numerical
//! differentiation, an oracle that cross-checks the three, and a fuzzing
//! campaign runner built on top.

pub mod error;
pub mod tensor;
pub mod config;
pub mod graph;
pub mod registry;
pub mod ad;
pub mod numdiff;
pub mod oracle;
pub mod fuzz;
pub mod campaign;
