//! Engine for synchronous N-way self-evaluating deliberation.
//!
//! A session runs a fixed team of agents through rounds of parallel
//! proposal, anonymized all-to-all peer scoring with a quadratic-voting
//! activation, and a recurrent consensus update. A small utility model
//! (`thermo`) predicts where extra rounds stop paying off, and the
//! `broker` uses it to pick a team and a round budget under an SLA.
//!
//! Module map:
//!
//! - [`core_types`]: identifiers, profiles, manifests, vote matrices.
//! - [`voting`]: activation, masking, aggregation, controversy.
//! - [`consensus`]: state commit, convergence delta, halting, final selection.
//! - [`thermo`]: utility curve, least-squares fit, optimal stop.
//! - [`broker`]: team composition and prior feedback.
//! - [`orchestrator`]: the round loop with barriers and hot-swap.
//! - [`agents`]: simulated and remote agent backends.
//! - [`telemetry`]: influence, win rates, latency, export.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod broker;
pub mod consensus;
pub mod core_types;
pub mod orchestrator;
pub mod telemetry;
pub mod thermo;
pub mod voting;

pub use core_types::{
    AgentId, AgentProfile, BlindedId, ConsensusStrategy, DeliberationState, ManifestError,
    Proposal, SessionManifest, Sla, VoteMatrix,
};
