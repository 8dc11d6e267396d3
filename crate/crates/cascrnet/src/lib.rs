//! A desk-scale, dependency-light deep-learning kit for compact CNN image
//! classification, built around Shared Channel Residual blocks and Atrous
//! Spatial Pyramid Pooling.
//!
//! The crate provides:
//! - dense tensors and differentiable primitives with a record-and-replay
//!   gradient tape ([`tensor`], [`ops`], [`tape`]),
//! - a finite-difference gradient oracle ([`gradcheck`]),
//! - the SCR/ASPP model family ([`model`]),
//! - focal loss, Adam, plateau LR scheduling, and the training loop ([`train`]),
//! - dataset ingestion, preprocessing, and the CTEN tensor format ([`data`]),
//! - the full evaluation suite: confusion matrices, macro precision/recall/F1,
//!   balanced accuracy, one-vs-rest ROC/AUC ([`metrics`]),
//! - a `train`/`eval`/`predict`/`gradcheck`/`params` CLI ([`cli`]).

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Dtype, Element, Tensor};
