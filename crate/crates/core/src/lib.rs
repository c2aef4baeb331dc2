//! Simulation and learning toolkit for a three-phase four-level
//! flying-capacitor inverter driven by finite-control-set model predictive
//! control, and for a small neural network trained to imitate it.

pub mod analysis;
pub mod ann;
pub mod controller;
pub mod dataset;
pub mod error;
pub mod mpc;
pub mod plant;
pub mod recipes;
pub mod scenarios;

pub use error::{Error, Result};
