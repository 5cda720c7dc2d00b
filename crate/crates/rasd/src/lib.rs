//! Retrieval-augmented speculative decoding.
//!
//! A draft model proposes a token tree, suffix-match retrieval contributes
//! candidate continuations, the two are pruned and fused into a single tree,
//! and the target model verifies the whole tree in one batched pass. The
//! verification is lossless: the output distribution equals direct sampling
//! from the target model.
//!
//! Reference models are additive-smoothed back-off n-gram tables, which keep
//! every probability exactly reproducible; any backend implementing the same
//! `next_distribution` / `tree_forward` contracts can replace them.

pub mod datastore;
pub mod dist;
pub mod draft;
pub mod engine;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod model;
pub mod retrieval_tree;
pub mod tree;
pub mod verify;

pub use dist::Distribution;
pub use error::{Error, Result};
pub use tree::Token;
