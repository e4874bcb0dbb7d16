// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod excitation;
pub mod graph;
mod ode;
pub mod trigger;
pub mod simulator;
pub mod config;
pub mod export;
pub mod pipeline;
