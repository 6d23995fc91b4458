//! Linear critics, softmax-linear policies and random feature tables.

mod critic;
mod features;
mod policy;

pub use critic::{q_value, LinearCritic};
pub use features::{FeatureSpec, FeatureTable, DENSE_LIMIT};
pub use policy::{log_probs, probs, score, SoftmaxPolicy};

pub(crate) use features::dot;
pub(crate) use policy::score_with_probs;
