//! Two-time-scale reduction of input-driven nonlinear ODE systems, with a built-in
//! three-synchronverter grid model.
//!
//! Pipeline: [`modal::find_steady_state`] -> [`modal::linearize`] ->
//! [`modal::eigenpairs`] / [`modal::participation_matrix`] -> [`modal::classify_modes`]
//! -> [`decouple::Reduction`] -> [`sim::run_scenario`].

#![no_std]

extern crate alloc;

pub mod decouple;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod modal;
pub mod sim;
pub mod system;
pub mod warning;

pub use error::{Error, Result};
pub use warning::Warning;
