//! Simulation toolkit for locally private graph learning under fake-node
//! poisoning.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod defense;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod ldp;
pub mod matrix;
pub mod protocol;
pub mod rng;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
