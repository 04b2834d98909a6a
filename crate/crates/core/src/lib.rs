//! KE-DRL: offline, multi-dimensional distributional off-policy evaluation.
//!
//! Estimates the conditional kernel mean embedding of the discounted-return
//! distribution under a target policy from behavior-policy trajectories, by
//! minimizing a closed-form MMD Bellman objective over a finite return-atom
//! dictionary in a Matérn RKHS. Distributional statistics (smoothed CDFs,
//! tail probabilities, utilities) are then read off the fitted embedding.
//!
//! The crate is organized around the estimation pipeline:
//! [`kernel`] (Matérn evaluation and Gram assembly), [`data`] (trajectories
//! and discounted returns), [`cme`] (conditional mean embedding weights),
//! [`density_ratio`] (uLSIF importance ratios), [`return_grid`] (atom
//! construction), [`bellman`] (the H/G/Φ operators and the fitted model),
//! [`optimizer`] (AdamW on the coefficient matrix), [`sim_env`] (the
//! linear-Gaussian benchmark environment), [`stats_recovery`] and
//! [`evaluation`] (reading statistics and scoring against Monte-Carlo
//! references), and [`pipeline`]/[`cli`] (end-to-end drivers).

pub mod bellman;
pub mod cli;
pub mod cme;
pub mod config;
pub mod data;
pub mod density_ratio;
pub mod error;
pub mod evaluation;
pub mod kernel;
pub mod optimizer;
pub mod pipeline;
pub mod return_grid;
pub mod sim_env;
pub mod stats_recovery;

pub use error::{KedrlError, Result};
pub use kernel::MaternParams;
