//! Desk-scale companion to `zeroseg-core`: file formats, configuration,
//! the synthetic corpus, feature precompute, training orchestration, and
//! evaluation plumbing used by the `zeroseg` binary.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod formats;
pub mod parallel;
pub mod pipeline;
pub mod store;
pub mod trainer;
