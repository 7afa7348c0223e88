//! Simulated recommendation feedback and three ways of evaluating recommenders
//! on it.
//!
//! The crate is organised around the flow of one experiment:
//!
//! * [`sim_env`] generates organic view sequences and bandit logs
//!   (context, shown item, propensity, click) from a drifting-user simulator.
//! * [`policies`] fits six classical recommenders on organic data only.
//! * [`organic_eval`] scores them with leave-one-out cross-validation and HR@1.
//! * [`counterfactual_eval`] estimates their click-through rate from the bandit
//!   logs with (clipped) inverse propensity scoring.
//! * [`ab_test`] deploys them in the simulator to measure the CTR they really get.
//! * [`experiment`] wires the above together and reads/writes every file format.

pub mod counterfactual_eval;
pub mod error;
pub mod experiment;
pub mod numeric;
pub mod organic_eval;
pub mod policies;
pub mod rng;
pub mod sim_env;

pub use error::{Error, Result};
