//! Core of the `zeroseg` workspace: a dense-tensor reverse-mode autodiff
//! engine with a fixed op catalog, the masked-ViT backbone, the grouping
//! segmentation head, multi-scale teacher-feature extraction, the
//! distillation and segment-matching losses, zero-shot inference, and the
//! mIoU evaluator.
//!
//! This crate is `no_std`-compatible (with `alloc`); everything here is pure
//! computation over in-memory buffers. File formats, the feature store, the
//! training harness, and the CLI live in the companion `zeroseg` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod backbone;
pub mod error;
pub mod evalsuite;
pub mod gradcheck;
pub mod graph;
pub mod inference;
pub mod losses;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod seghead;
pub mod synth;
pub mod teacher;
pub mod tensor;

mod ops;

pub use error::CoreError;
pub use graph::{Graph, TensorId};
pub use rng::Rng;
pub use tensor::Tensor;
