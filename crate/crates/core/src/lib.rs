//! Slow-fast model of pulsatile and surge secretion driven by a regulating
//! relaxation oscillator.

pub mod bifurcation;
pub mod foliation;
pub mod integrator;
pub mod model;
pub mod quadrature;
pub mod roots;
pub mod signal;
pub mod tuner;

pub use model::{ReducedParams, State4};
