//! Sparse identification of closed-form choice-probability specifications.

pub mod cli;
pub mod exprlib;
pub mod featlib;
pub mod rng;
pub mod sigstats;
pub mod sparsesolve;
pub mod synthgen;
