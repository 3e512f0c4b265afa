//! Benchmark laboratory for geo-level incrementality ("geo lift")
//! experiments.
//!
//! The crate has two halves:
//!
//! * a simulator that generates synthetic geo-week marketing panels under a
//!   configurable data-generating process plus five stress scenarios
//!   (nonlinear trends, staggered/heterogeneous lift curves, concurrent
//!   shocks, nonlinear growth, and control-group drift), together with the
//!   ground-truth potential outcomes and the implied target estimand; and
//! * seven estimators of the average treatment effect on the treated —
//!   three augmented synthetic-control variants and four panel double
//!   machine-learning variants — evaluated by a Monte Carlo study harness
//!   that reports absolute bias, coverage, power, and confidence-interval
//!   width.
//!
//! Everything is deterministic given a master seed: simulation, estimation,
//! and the study harness derive per-replication named random streams, so
//! reports are byte-identical across runs and across worker-thread counts.

pub mod error;
pub mod rng;
pub mod panel;
pub mod sim;
pub mod learners;
pub mod scm;
pub mod dml;
pub mod harness;

pub use error::{Error, Result};
