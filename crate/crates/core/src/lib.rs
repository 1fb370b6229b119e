//! Simulation and model fitting for force-field adaptation and
//! generalization experiments with a planar two-link arm.

pub mod analysis;
pub mod arm;
pub mod baselines;
pub mod controllers;
pub mod environment;
pub mod error;
pub mod fitting;
pub mod io;
pub mod optimizer;
pub mod plot;
pub mod protocol;
pub mod synthetic;
pub mod trial;
