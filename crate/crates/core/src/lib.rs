//! Multi-view multi-label decoding: ROI pooling, a product-of-experts
//! variational autoencoder over three views, label-aware masked attention,
//! asymmetric focal loss, multi-label metrics and rank statistics.

pub mod bvae;
pub mod checkpoint;
pub mod cli;
pub mod dataio;
pub mod emohead;
pub mod mlmetrics;
pub mod error;
pub mod ndcore;
pub mod objective;
pub mod poe;
pub mod rankstats;
pub mod roipool;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = ndcore::Tensor<f32>;
pub type Tensor64 = ndcore::Tensor<f64>;

pub use checkpoint::Checkpoint;
pub use objective::{ModelParams32, ModelParams64};

pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
