//! Discounting-free policy evaluation for unichain MDPs.
//!
//! Evaluates a stationary policy's *bias* (relative value) from both
//! transient and recurrent states. Because stepwise state distributions
//! can assign zero mass to part of the state set, the least-squares
//! temporal-difference systems here are seminorm-weighted and solved
//! through Moore-Penrose pseudoinverses. A trained system is a set of
//! timestep neighborhoods, one linear approximator per neighborhood,
//! with prediction offsets calibrated through shared reference states.
//!
//! The crate is organized in layers:
//!
//! * [`linalg`] — pseudoinverse, PSD spectral tools, seminorm LS minimizer;
//! * [`mdp`] — finite MDPs, policies, unichain environment construction,
//!   and the trial simulator;
//! * [`exact`] — ground-truth chain analysis (stationary distribution,
//!   gain/bias, state classification, absorption and mixing times);
//! * [`kernels`] — random state features, state kernels, and distribution
//!   distances (sampled/exact squared MMD, total variation, exact OT);
//! * [`lstd`] — LSTD system assembly (exact or from samples) and solvers;
//! * [`neighborhoods`] — anchor detection, neighborhood specification,
//!   reference-state identification, merging, and offset calibration;
//! * [`experiments`] — named approximation schemes, end-to-end exact and
//!   sampling runs, and the `ε_PB` / `ε_MS` evaluation metrics;
//! * [`report`] — CSV result rows, learning-curve files, and the
//!   env-by-scheme comparison table.
//!
//! Runnable walkthroughs live in `examples/`; the `bias-eval` binary
//! exposes `env describe`, `run`, `sweep`, and `report` subcommands.

pub mod cli;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod kernels;
pub mod linalg;
pub mod lstd;
pub mod mdp;
pub mod neighborhoods;
pub mod report;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
