//! Long-range context blocks for speaker embedding models: hierarchical-split
//! residual blocks (local receptive-field growth) and depthwise separable
//! self-attention with optional explicit sparse top-k masking (global pairwise
//! modeling), embedded in small ResNet backbones. Ships with cosine scoring,
//! EER/minDCF/DET evaluation, reverse-mode gradient checking, and parameter
//! and latency analysis.

pub mod analysis;
pub mod attention;
pub mod autodiff;
pub mod backbone;
pub mod error;
pub mod gradcheck;
pub mod hs_block;
pub mod metrics;
pub mod tensor;

pub use analysis::BenchReport;
pub use attention::{DSSAConfig, MHAConfig};
pub use backbone::{BackboneConfig, Model, Variant};
pub use error::{Error, Result};
pub use hs_block::HSBlockConfig;
pub use metrics::TrialSet;
pub use tensor::Tensor;
