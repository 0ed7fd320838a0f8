//! Penalized obstacle problem for generalized Dean–Kawasaki equations on the
//! one-dimensional torus: simulation, kinetic measures and verification.

pub mod config;
pub mod grid;
pub mod kinetics;
pub mod model;
pub mod noise;
pub mod output;
pub mod solver;
pub mod verify;
