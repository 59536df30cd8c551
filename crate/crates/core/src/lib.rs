//! Hierarchical leader/agent-team inference with a trainable-leader objective.
//!
//! A single leader model coordinates a team of K agent models over T rounds:
//! agents propose solutions, the leader synthesizes them into a tagged
//! `<think>`/`<answer>` output, and agents revise against the leader's output
//! in subsequent rounds. On top of that protocol this crate provides:
//!
//! - the group-relative clipped surrogate objective used to train the leader,
//!   with total-token-count normalization and an analytic-gradient toy policy
//!   for verifying the math end to end,
//! - data-generation pipelines (backtracking SFT records, per-task leader
//!   prompt sets, multi-round continuation sets),
//! - evaluation machinery (per-round accuracy curves, budgeted majority
//!   voting, leader accuracy conditioned on agent correctness),
//! - an exact Markov-chain enumerator for synthetic teams, used as an oracle
//!   against Monte Carlo runs.
//!
//! Backends are uniform behind [`backends::Backend`]: live OpenAI-compatible
//! HTTP endpoints, deterministic scripted lookups for tests, and synthetic
//! stochastic agents for team-dynamics simulation.

pub mod backends;
pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod extract;
pub mod jsonl;
pub mod model;
pub mod objective;
pub mod orchestrator;
pub mod prompt;
pub mod sim;
pub mod toy;

pub use error::{Error, Result};
