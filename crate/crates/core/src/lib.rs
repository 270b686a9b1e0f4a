//! Sampled dual ε-subgradient control of inverter fleets on radial feeders,
//! with a semidefinite relaxation of optimal power flow on the network side.
//!
//! Start with [`harness::ScenarioConfig::five_node`] and
//! [`harness::run_closed_loop`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capability;
pub mod controller;
pub mod error;
pub mod harness;
pub mod hermlin;
pub mod netmodel;
pub mod plant;

pub use error::{Error, Result};

#[cfg(test)]
mod test_support;
