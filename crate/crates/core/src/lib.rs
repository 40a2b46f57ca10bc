//! Consensus-driven active model selection.
//!
//! Given a pool of unlabeled items and the predictions of several candidate
//! classifiers, the crate maintains Dirichlet beliefs over each model's
//! confusion matrix, estimates the probability that each model is the most
//! accurate, and picks the next item to label by expected information gain.

pub mod acquisition;
pub mod belief;
pub mod benchmark;
pub mod engine;
pub mod harness;
pub mod pbest;
pub mod special;
