//! Decentralized dual quasi-Newton (D-BFGS) consensus optimization.
//!
//! Nodes of an undirected graph each hold a strongly concave objective and
//! must agree on a common maximizer. The consensus constraints are dualized
//! per directed edge, and the dual is minimized either by plain gradient
//! descent or by D-BFGS, where every node keeps a regularized BFGS
//! approximation over its neighborhood's dual variables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod curvature;
pub mod dual;
pub mod engine_async;
pub mod engine_sync;
pub mod error;
pub mod experiments;
pub mod problem;
pub mod topology;
pub mod trace;

pub use error::{Error, Result};
