//! Bayesian optimization with probabilistic regret bound (PRB) stopping.
//!
//! The engine models an objective on the unit hypercube with a Gaussian
//! process, draws approximate posterior sample paths cheaply via random
//! features plus a Matheron correction, and turns "is this point within
//! `epsilon` of the optimum?" into Bernoulli simulations. An adaptive
//! sequential test converts those simulations into probably-correct
//! stop/continue decisions, and a replay harness benchmarks the resulting
//! stopping rule against common baselines on synthetic objectives.

pub mod acquisition;
pub mod bounds;
pub mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod pathwise;
pub mod regret;
pub mod seed;
pub mod seqtest;
pub mod special;
pub mod stopping;

pub use error::{Error, Result};
pub use seed::Seed;
