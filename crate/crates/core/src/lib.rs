//! Option pricing and hedging in discrete time as a risk-adjusted Markov
//! decision process.
//!
//! The seller of a European option hedges with the underlying and charges
//! the expected hedge cost plus a penalty on the variance of the hedge
//! portfolio. Solving the resulting MDP gives the price and the hedge
//! together. Solvers:
//!
//! * [`dp`]: backward dynamic programming when the model is known;
//! * [`fqi`]: fitted Q-iteration from recorded transitions;
//! * [`tabular`]: finite-state induction and tabular Q-learning;
//! * [`utility`]: exponential-utility indifference prices for comparison;
//! * [`bs`]: the Black-Scholes limit.

pub mod basis;
pub mod bs;
pub mod dataset;
pub mod dp;
pub mod error;
pub mod fqi;
pub mod linalg;
pub mod market;
pub mod portfolio;
pub mod tabular;
pub mod utility;

pub use error::{QlbsError, Result};

/// Crate version, reported by the experiment driver.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
