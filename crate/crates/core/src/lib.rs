//! Finite-element Biot poroelasticity with a goal-oriented, adaptively enriched POD reduced-order model.

pub mod adaptive;
pub mod app;
pub mod assembly;
pub mod discretization;
pub mod error;
pub mod estimator;
pub mod fom;
pub mod linsolve;
pub mod pod;
pub mod rom;
pub mod sparse;

pub use error::{Error, Result};
