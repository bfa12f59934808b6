//! Simulator for decentralized stochastic compositional minimax optimization.
//!
//! Workers hold private objectives `f_k(g_k(x), y)`, communicate through a
//! doubly stochastic mixing matrix, and run either the gossip method or the
//! gradient-tracking method (with inner-function tracking). The crate provides
//! problem instances with exact oracles, the optimizers, diagnostics, the
//! theorem step-size calculators, and an experiment harness with a CLI.

pub mod algorithms;
pub mod harness;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod theory;
pub mod topology;

/// Per-worker parameter or state vector.
pub type ParamVec = nalgebra::DVector<f64>;
