//! Intra-day inverter agent: actor-critic MLP trained with PPO.

pub mod adam;
pub mod mlp;
pub mod normalizer;
pub mod ppo;
pub mod train;

pub use ppo::{Mode, Policy, PpoConfig};
pub use train::{evaluate, finetune, load_checkpoint, pretrain, save_checkpoint, write_curve, TrainOutcome};
