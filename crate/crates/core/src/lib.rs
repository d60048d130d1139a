//! Multi-session forward-auction federated learning simulator.
//!
//! Model users (MUs) with finite budgets compete in sealed-bid second-price
//! auctions for data owners (DOs) across a sequence of training sessions.
//! Recruited DOs train a federated model; their per-round Shapley
//! contributions drive Beta reputations, and the sum of reputations of
//! recruited DOs is each MU's utility.
//!
//! The crate is split along the simulation's layers:
//!
//! - [`market`]: bid requests, auctions, settlement and the per-session loop.
//! - [`reputation`]: Shapley contributions and Beta reputation records.
//! - [`flsim`]: synthetic tasks, local SGD, FedAvg and evaluation.
//! - [`neural`]: a small MLP with backprop and RMSprop.
//! - [`rl`]: replay buffer, epsilon schedule and the DQN learner.
//! - [`agents`]: the hierarchical pacing/bidding pair plus baseline bidders.
//! - [`harness`]: experiment configuration, orchestration, logs and export.

pub mod agents;
pub mod error;
pub mod flsim;
pub mod harness;
pub mod market;
pub mod money;
pub mod neural;
pub mod reputation;
pub mod rl;
pub mod seed;

pub use error::{Error, Result};
pub use money::Money;
