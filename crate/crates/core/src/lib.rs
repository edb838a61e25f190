//! Simulation library for game-based dynamic pricing and rate scheduling in
//! multi-user service systems under a randomly switching environment.
//!
//! The crate is organized around the pipeline that the bundled experiments
//! run end to end:
//!
//! * [`env`] — finite-state continuous-time Markov environment: generator
//!   construction, path sampling, heavy-traffic time scaling.
//! * [`capacity`] — convex capacity regions of feasible service-rate vectors
//!   (halfspace form), membership and face restriction.
//! * [`game`] — utility and dual-cost functions, closed-form two- and
//!   three-user equilibrium solvers, generic numerical solvers for the mixed
//!   zero-sum / non-zero-sum games, inverse price maps, condition validators.
//! * [`rdrs`] — the one-dimensional reflected diffusion with regime switching
//!   that models the workload under the policy, plus the workload-to-queue
//!   mapping and a two-dimensional comparison baseline.
//! * [`des`] — pre-limit discrete-event simulator of the physical queueing
//!   system with diffusion and fluid scalings.
//! * [`experiments`] — paired Monte Carlo policy comparisons (mean total cost
//!   difference series) and nonce derivation from policy decisions.
//! * [`config`] / [`runner`] — experiment configuration files, bundled
//!   presets, and the CLI orchestration layer.

pub mod capacity;
pub mod config;
pub mod des;
pub mod env;
pub mod error;
pub mod experiments;
pub mod game;
pub mod rdrs;
pub mod runner;

pub use error::{Error, Result};
