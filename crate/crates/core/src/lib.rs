//! Risk-sensitive, actor-free safe reinforcement learning.
//!
//! The policy has no actor network. At every state it solves a convex
//! program over the action: maximize the reward critic subject to a CVaR
//! bound on the cost-return, enforced with an exact penalty. Both critics are
//! partially input-convex networks, so the program is convex in the action
//! and a projected first-order method followed by a cutting-plane polish
//! finds its global minimum.
//!
//! Modules, bottom-up:
//!
//! - [`nn`]: dense layers, MLPs, analytic gradients, Adam.
//! - [`picnn`]: the partially input-convex network and its constraint
//!   projection.
//! - [`risk`]: Gaussian CVaR and the 2-Wasserstein distance.
//! - [`critics`]: reward and distributional safety critics with TD3 updates.
//! - [`solver`]: the policy objective, projected Adam and the cutting-plane
//!   refinement.
//! - [`env`]: the cascade water-tank simulator.
//! - [`replay`]: the uniform replay buffer.
//! - [`trainer`]: training loop, evaluation, experiments and the
//!   actor-critic baseline.
//! - [`config`], [`checkpoint`]: TOML configuration and saved agents.
//! - [`check`]: property suites behind the `check` subcommand.
//! - [`par`]: sequential or rayon execution with identical results.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod critics;
pub mod env;
pub mod error;
pub mod nn;
pub mod par;
pub mod picnn;
pub mod replay;
pub mod risk;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
