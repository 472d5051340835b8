//! Protein contact graphs, blob-pooled graph isomorphism networks, post-hoc
//! explanations and their evaluation.

pub mod diff;
pub mod evaluation;
pub mod explainers;
pub mod graph_builder;
pub mod models;
pub mod protein_io;
pub mod synthetic;
pub mod training;
