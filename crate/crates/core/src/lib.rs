//! Hardware-aware two-tier architecture search for small multimodal
//! networks.
//!
//! The first tier evolves unimodal backbone genomes against an elastic
//! weight-sharing supernet; the second tier runs a differentiable search
//! over fusion networks that combine frozen backbone features. Both tiers
//! score candidates on accuracy together with latency and energy read from
//! per-device lookup tables, and the engine keeps a Pareto archive across
//! generations.
//!
//! Everything here is deterministic for a fixed seed: random draws go
//! through counter-derived ChaCha streams, containers with iteration order
//! that could leak into results are ordered, and floating point stays in
//! `f64` end to end.

pub mod data;
pub mod engine;
pub mod error;
pub mod fusion;
pub mod hwcost;
pub mod moo;
pub mod par;
pub mod searchspace;
pub mod seeds;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
