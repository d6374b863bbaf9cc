//! Simulation and verification toolkit for three-layer networks with a frozen
//! random first layer, trained by gradient flow at finite width and in the
//! mean-field limit.

pub mod activations;
pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod finite_model;
pub mod kernel;
pub mod linalg;
pub mod mf_model;
pub mod trajectory;

pub use error::{Error, Result};
