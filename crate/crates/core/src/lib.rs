//! Count-based optimistic exploration in feature space.
//!
//! A factored visit-density over binary state features yields a generalised
//! visit-count (pseudocount) for every state; its inverse square root is an
//! exploration bonus added to the reward of a Sarsa(λ) learner with linear
//! function approximation over the same features.
//!
//! * [`features`]: one-hot and tile-coded binary feature maps, action blocks.
//! * [`density`]: the factored KT / empirical visit-density.
//! * [`pseudocount`]: pseudocounts, bonuses and reward augmentation.
//! * [`agent`]: linear Sarsa(λ) with replacing traces and ε-greedy selection.
//! * [`theory`]: executable similarity bounds for the density.
//! * [`envs`]: chain, multi-room and dense-reward gridworlds.
//! * [`harness`]: the experiment runner behind the `phieb` CLI.
//!
//! Independent trials and bound-check sweeps run on rayon when the default
//! `parallel` feature is enabled; results do not depend on the mode.

pub mod agent;
pub mod density;
pub mod envs;
pub mod error;
pub mod exec;
pub mod features;
pub mod harness;
pub mod pseudocount;
pub mod theory;

pub use error::{Error, Result};
