//! Distributed primal-dual actor-critic for constrained cooperative
//! multi-agent reinforcement learning.

pub mod cmg;
pub mod cournot;
pub mod error;
pub mod fa;
pub mod io;
pub mod agent;
pub mod network;
pub mod oracle;
pub mod trainer;
mod graph;

pub use error::{Error, Result};
