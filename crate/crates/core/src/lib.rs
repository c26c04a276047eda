//! Set-based fraud scoring for insurance claims.
//!
//! A claim is an unordered, variable-length collection of claim rows
//! `(procedure code, factor, amount)`. The models here embed each row, extract
//! per-row features (bag-of-words, convolution, piecewise feed-forward or a
//! single self-attention block), aggregate with sigmoid-gated sum pooling and
//! score the result with a small feed-forward head. Training uses a
//! cost-weighted cross entropy, and evaluation reports AUROC, average
//! precision and the clerk-cost Profit metric.

pub mod data;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod tensor;
pub mod training;

pub use data::{Claim, ClaimRow, Dataset, GeneratorSpec, PreprocessStats};
pub use metrics::EvalReport;
pub use models::{EncoderKind, Model, ModelConfig};
pub use tensor::{NodeId, Tape, Tensor, TensorError};
pub use training::{TrainConfig, TrainHistory};

