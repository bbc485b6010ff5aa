//! Decentralized sequential multihypothesis testing.
//!
//! A sensor network observes raw data, quantizes each observation into a
//! short message, and streams the messages to a fusion center that decides
//! which of M candidate states generated the data — stopping as early as the
//! error budget allows. This crate provides:
//!
//! - the statistical model layer ([`models`]): hypothesis densities, priors,
//!   loss structure, composite grouping, seeded sampling;
//! - quantizer representations and their induced message distributions,
//!   with both divergence notions for randomized quantizers ([`quantizers`]);
//! - maximin quantizer design: the randomization of at most M-1
//!   coefficient quantizers maximizing the least divergence from a state
//!   ([`maximin`]);
//! - the fusion-center decision process: a two-stage test with a
//!   preliminary decision, quantizer switch, block-design randomization,
//!   and a centralized reference test ([`engine`]);
//! - a Monte Carlo harness with reproducible seeding, parallel trials, and
//!   CSV/JSON reporting ([`montecarlo`]);
//! - a JSON configuration layer with bundled example scenarios ([`config`]).

pub mod config;
pub mod engine;
pub mod error;
pub mod maximin;
pub mod models;
pub mod montecarlo;
pub mod quantizers;

pub use error::{Error, Result};
