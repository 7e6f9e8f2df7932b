//! Deterministic, seedable simulator and optimization library for proactive
//! UAV network slicing.
//!
//! The crate is organized around a per-slot control pipeline:
//!
//! * [`env`] — synthetic urban radio ground truth (buildings, LoS, path loss,
//!   antenna patterns, fading).
//! * [`mobility`] — pedestrian traces and the Beacon refresh that feeds
//!   per-UAV location histories.
//! * [`esn`] — distributed echo-state-network location prediction with ADMM
//!   consensus over the readout weights.
//! * [`cgnet`] — online MLP estimators for channel-gain coefficients, trained
//!   with experience replay and Adam.
//! * [`urllc`] — finite-blocklength power/bandwidth math and the two binary
//!   searches that size the URLLC slice.
//! * [`lyap`] — virtual queues, drift-plus-penalty bookkeeping and the
//!   closed-form auxiliary-rate solver.
//! * [`mbbopt`] — per-slot broadband decisions: max-weight slice matching,
//!   SCA-linearized placement/power subproblems and the alternating loop.
//! * [`sim`] — the orchestrator, baselines and metrics output.

pub mod cgnet;
pub mod env;
pub mod esn;
pub mod geom;
pub mod linalg;
pub mod lyap;
pub mod mbbopt;
pub mod mobility;
pub mod rngutil;
pub mod scenario;
pub mod sim;
pub mod urllc;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
