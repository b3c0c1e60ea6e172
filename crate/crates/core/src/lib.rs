//! Conditional handover (CHO) simulation and Markov-chain analysis.
//!
//! The crate models a 5G CHO procedure over Rayleigh/Rician fading links,
//! simulates multi-UE scenarios tick by tick, and analyses the resulting
//! traces as a discrete-time Markov chain.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod error;
pub mod fsm;
pub mod markov;
pub mod metrics;
pub mod mobility;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
