//! Distributed channel allocation over a shared spectrum.
//!
//! Links learn the expected QoS of every channel by random exploration, agree
//! on an allocation through an auction whose bids are carried only by CSMA
//! back-off timing, and then exploit the allocation. Centralized solvers serve
//! as oracles for regret accounting.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod assignment;
pub mod error;
pub mod experiment;
pub mod medium;
pub mod model;
pub mod rng;
pub mod runner;
pub mod trace;

pub use error::{Error, Result};
