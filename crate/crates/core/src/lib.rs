//! Multi-field neural ranking.
//!
//! Documents are described by several text fields (title, URL, body, anchor
//! texts, clicked queries). Each field instance is encoded by a character
//! tri-gram convolutional network, instances are averaged under a presence
//! mask, fields are concatenated, and the result is matched against a query
//! representation that carries one slice per field. Training is pairwise with
//! a gain-weighted cross-entropy loss; evaluation uses NDCG with a paired
//! t-test. BM25 and BM25F are provided as classical baselines, and a seeded
//! synthetic corpus generator produces multi-field test collections.

pub mod autodiff;
pub mod baselines;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod text;
pub mod training;

pub use error::{Error, Result};
