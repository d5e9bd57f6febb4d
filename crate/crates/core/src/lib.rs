//! Distributed approximate Newton solvers for resource allocation over
//! networks, with Laplacian edge-weight design and exact reference oracles.

pub mod error;
pub mod graph;
pub mod linalg;
pub mod problem;
pub mod reduction;
pub mod reference;
pub mod sdp;
pub mod dana_c;
pub mod dana_d;
pub mod weight_design;
pub mod cli;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
