//! Desk-scale RLAIF pipeline for multimodal sequence models.
//!
//! The crate trains a small decoder-only transformer on a synthetic
//! "symbolic video" world and walks it through the full alignment loop:
//! curriculum SFT, context-aware preference generation, Bradley-Terry
//! reward modeling, and PPO fine-tuning against the learned reward with a
//! KL leash to the frozen SFT reference. A programmatic oracle over the
//! synthetic world grades every stage, so the whole pipeline is
//! verifiable on a CPU.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod ppo;
pub mod prefs;
pub mod reward;
pub mod rng;
pub mod sft;
pub mod tensor;
pub mod tokenizer;
pub mod world;

mod error;

pub use error::{Error, Result};
