//! Attacker-defender routing game on a parallel queueing system.
//!
//! An attacker can redirect arrivals away from the shortest queue; a
//! defender can secure the routing decision; both pay per-unit-time
//! technology costs. This crate provides:
//!
//! - the embedded discrete-time game model ([`game`]),
//! - exact 2x2 matrix-game solutions ([`matrix_game`]),
//! - the linear feature architecture ([`features`]),
//! - fitted least-squares policy evaluation from samples ([`evaluation`]),
//! - full-state-space equilibrium and best-response oracles ([`exact`]),
//! - evaluation-error bound diagnostics ([`bound`]),
//! - the minimax least-squares policy iteration loop ([`lspi`]).

pub mod bound;
pub mod evaluation;
pub mod exact;
pub mod features;
pub mod game;
pub mod linalg;
pub mod lspi;
pub mod matrix_game;

pub use game::{GameParams, State};
pub use rand::SeedableRng;
pub use rand_chacha::ChaCha12Rng;
