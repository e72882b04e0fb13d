//! Placement of Cloud-Native Network Function chains on a multi-cloud graph.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every algorithmic
//! piece of the suite:
//!
//! * [`model`] and [`eval`]: instances, placements and exact evaluators for
//!   cost, resource usage, chain delay and feasibility.
//! * [`exact`]: depth-first branch-and-bound and a brute-force oracle.
//! * [`gen`]: seeded instance and dataset generation.
//! * [`nn`]: a small reverse-mode autodiff tape with dense, GraphSAGE and
//!   Adam building blocks.
//! * [`diffusion`]: the heterogeneous-graph encoding, the GNN noise
//!   predictor, training and reverse-diffusion sampling.
//!
//! File formats, wall-clock timing and the command-line harness live in the
//! companion `cnfdiff` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diffusion;
pub mod error;
pub mod eval;
pub mod exact;
pub mod gen;
pub mod math;
pub mod model;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub use eval::{FeasibilityReport, PositionIndex, ResourceUsage, Violation, ViolationKind};
pub use exact::{brute_force_oracle, solve_exact, Clock, ExactResult, ExactStatus, NoClock};
pub use model::{CloudNetwork, CnfType, Instance, InstanceMeta, Placement, Sfc, SfcEdge};

/// Absolute slack allowed when comparing usage against a capacity or a
/// delay against its budget.
pub const FEASIBILITY_TOL: f64 = 1e-9;
