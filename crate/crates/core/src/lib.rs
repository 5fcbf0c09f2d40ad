//! Sense disambiguation workbench for function words, built around German
//! *sich*: sense inventory, corpus extraction, double annotation with
//! agreement and adjudication, contextual embeddings, linear classifiers,
//! cross-validated experiments and PCA projections.

pub mod annotation;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod linear_model;
pub mod projection;
pub mod schema;

pub use error::{Error, Result};
pub use exec::Execution;
