//! Label-efficient refinement of fixed embeddings.
//!
//! A small network is trained on a handful of labeled embeddings to pull each
//! instance toward its class prototype while reconstructing the input, and its
//! signal path is then used as a dimension-preserving transform for cosine
//! retrieval. The crate also carries the usual post-processing baselines
//! (L2, PCA whitening, shrinkage LDA), the neighborhood metrics used to compare
//! them, and a cross-validated evaluation harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). Embeddings are
//! stored as `f32` ([`EmbeddingMatrix`]); fitting, training and evaluation run
//! in `f64`.

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod preprocessing;
pub mod prototypes;
pub mod scalar;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

/// Stored embeddings: 32-bit floats, one row per instance.
pub type EmbeddingMatrix = Matrix<f32>;
/// Working-precision matrix used by fitting and training.
pub type ComputeMatrix = Matrix<f64>;
pub type LabeledDataset = data::LabeledDataset<f32>;
pub type PrototypeSet = prototypes::PrototypeSet<f64>;
/// Trained parameters in training precision.
pub type PearlParams = model::Params<f64>;
pub type Standardizer = preprocessing::Standardizer<f64>;
pub type PcaWhitener = preprocessing::PcaWhitener<f64>;
pub type LdaProjector = preprocessing::LdaProjector<f64>;
