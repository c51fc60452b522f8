//! Sparse nonlinear ODE model recovery.
//!
//! A GRU encoder reads windows of measured states and inputs, a dense head
//! turns the final hidden state into polynomial-library coefficients, a
//! top-p mask keeps the sparsity budget, and an RK4 solve of the resulting
//! model is compared against the measurements. Gradients flow back through
//! every stage exactly. The [`fpga`] module holds an analytical latency and
//! resource model of the pipelined recurrent kernel.

pub mod dynamics;
pub mod error;
pub mod fpga;
pub mod library;
pub mod nn;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
