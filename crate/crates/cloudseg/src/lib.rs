//! Semantic segmentation of labeled point clouds with local adaptive
//! feature augmentation, multi-layer VLAD global aggregation, and an
//! aggregation training loss.
//!
//! The numeric core ([`tensor`]) is generic over the scalar type; the
//! pipeline itself runs in f64 via the [`Scalar`] alias.

pub mod checkpoint;
pub mod cloud;
pub mod config;
pub mod cvlad;
pub mod harness;
pub mod lafa;
pub mod loss;
pub mod metrics;
pub mod mlp;
pub mod neighborhood;
pub mod network;
pub mod optim;
pub mod params;
pub mod real;
pub mod tensor;
pub mod training;

pub use real::Real;

/// Scalar type used by the segmentation pipeline.
pub type Scalar = f64;

/// Tape specialization the pipeline runs on.
pub type Graph = tensor::Tape<Scalar>;
