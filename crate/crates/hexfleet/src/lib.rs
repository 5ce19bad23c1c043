//! Hex-grid electric-vehicle fleet control.
//!
//! The crate assembles a desk-scale control stack for EV ride-hailing on a
//! hexagonal grid:
//!
//! - [`hexgrid`]: axial hex tessellation, adjacency, hop distances, and the
//!   normalized-adjacency / Laplacian matrices used downstream.
//! - [`scenario`]: exogenous demand and travel-time fields, trip ingestion,
//!   a synthetic generator, Poisson order arrivals, and the fare model.
//! - [`env`]: the semi-MDP fleet environment with variable action durations,
//!   state-of-charge accounting, and a four-component reward.
//! - [`projection`]: the feasible-action layer — per-epoch MILP built from
//!   policy intentions, solved by branch-and-bound over a bounded-variable
//!   simplex, with a deterministic greedy fallback.
//! - [`wdro`]: graph-aligned Wasserstein-1 robustness — Mahalanobis ground
//!   metric, projected-subgradient inner minimization, robust value targets,
//!   and the primal-dual risk-budget update.
//! - [`neural`]: a minimal reverse-mode autodiff tape plus the fixed
//!   architecture (GCN encoder, Gumbel-softmax heads, squashed-Gaussian
//!   power head, twin critics, value network).
//! - [`agent`]: replay buffer, the robust actor-critic training loop,
//!   ablation switches, the greedy dispatch baseline, and evaluation.
//! - [`config`]: TOML run configuration with strict key checking.
//!
//! Start with the runnable examples (`cargo run --release --example ...`)
//! or the `hexfleet` binary for end-to-end runs.

pub mod agent;
pub mod config;
pub mod env;
pub mod hexgrid;
pub mod linalg;
pub mod neural;
pub mod projection;
pub mod scenario;
pub mod theory;
pub mod wdro;
