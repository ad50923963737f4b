pub mod checkpoint;
pub mod config;
pub mod network;
mod ops;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{DenoiserConfig, TrainConfig};
pub use network::{DenoiserNet, ForwardOutput, LogitTable};
pub use train::{aux_cross_entropy, loss_and_grads, train, LossRecord, Trainer};
