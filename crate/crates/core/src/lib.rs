//! Deterministic desk-scale engine for studying pipeline-parallel training
//! of dynamic models.
//!
//! Dynamic training schemes (expert routing, gradual pruning, layer
//! freezing, sparse attention, early exit, depth routing) shift per-layer
//! compute over the course of a run, which shows up as bubbles in a
//! pipeline-parallel schedule. This crate models that end to end:
//!
//! - [`workload`]: layers, workers, contiguous stage assignments, and the
//!   load/imbalance metrics.
//! - [`dynamism`]: per-iteration multiplier generators for the six dynamism
//!   cases, including the cubic sparsity schedule and distributed global
//!   magnitude pruning.
//! - [`balance`]: the min-max contiguous partitioner and the diffusion
//!   balancer, plus the static baselines, all producing migration plans.
//! - [`repack`]: first-fit consolidation of shrinking workloads onto fewer
//!   workers.
//! - [`sim`]: deterministic discrete-event simulation of GPipe / 1F1B
//!   iterations with bubble, migration, and all-reduce accounting.
//! - [`scenario`] / [`runner`] / [`report`]: the scenario loop
//!   (train -> dynamism -> profile -> balance -> re-pack), comparisons, and
//!   JSONL/CSV emission.

pub mod balance;
pub mod dynamism;
pub mod error;
pub mod repack;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod seeds;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
