//! Joint objective, KL warm-up schedule, optimizer, training loop and the
//! inference path.

mod adam;
mod anneal;
mod model;
mod train;

pub use adam::{Adam, AdamConfig};
pub use anneal::{beta, AnnealState};
pub use model::{Ablation, Encoder, Head, LossDiagnostics, LossWeights, ModelParams, ModelSpec};
pub use train::{init_model, train, EpochLog, SeedStreams, TrainConfig, TrainData, TrainFailure};

pub type ModelParams32 = ModelParams<f32>;
pub type ModelParams64 = ModelParams<f64>;
