//! Multi-beam NOMA for hybrid mmWave downlinks.
//!
//! The pipeline for one drop is: [`channel`] generates users, [`grouping`]
//! pairs them onto RF chains and splits the array, [`beamforming`] builds
//! the analog beams, [`precoding`] computes the ZF digital precoder and
//! [`power`] allocates power by successive convex approximation.
//! [`baselines`] holds the OMA and single-beam NOMA references and
//! [`harness`] runs Monte Carlo experiments on top of all of it.

pub mod baselines;
pub mod beamforming;
pub mod channel;
pub mod downlink;
pub mod error;
pub mod linalg;
pub mod grouping;
pub mod harness;
pub mod power;
pub mod precoding;

pub use error::{Error, Result};
