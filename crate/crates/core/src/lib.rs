#![allow(clippy::needless_range_loop)]

//! Federated few-shot domain adaptation on synthetic domain-shifted data.
//!
//! A server pre-trains a small extractor / adapter / classifier stack on a
//! source domain; clients receive it, freeze the extractor and classifier,
//! fine-tune only the adaptation layer on a k-shot support set, classify by
//! nearest class prototype, and send adapter parameters plus prototypes back
//! for weighted aggregation. An optional stream sampler populates the
//! support set from unlabeled data under a labelling budget.

pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod model;
pub mod numerics;
pub mod prototypes;
pub mod sampler;
pub(crate) mod wire;

pub use error::{Error, Result};
