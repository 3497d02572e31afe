//! Event-triggered output synchronization of heterogeneous nonlinear agents
//! over directed graphs.
//!
//! Each agent runs a local reference model `v̇_i = A v_i + B μ_i` whose input
//! is refreshed only at consensus events, and a regulation loop that makes the
//! plant output track `c(v_i)` with a sampled-data feedback refreshed at
//! regulation events. The outputs of all agents converge to a common
//! trajectory `c(v_∞(t))`.
//!
//! * [`numerics`]: dense linear algebra, Riccati and Sylvester solvers.
//! * [`graph`]: directed graphs, Laplacians and spectral quantities.
//! * [`consensus`]: gain design and the per-agent consensus trigger.
//! * [`regulation`]: agent plugins, internal-model compensators and the
//!   regulation trigger.
//! * [`sim`]: the coupled hybrid simulator, traces, event logs and metrics.
//! * [`verify`]: post-run invariant checks.
//! * [`config`]: scenario files.
//! * [`cli`]: the `design`, `run` and `verify` commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod consensus;
pub mod graph;
pub mod numerics;
pub mod regulation;
pub mod sim;
pub mod verify;
