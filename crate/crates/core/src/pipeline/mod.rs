//! Model assembly, training, decoding and persistence.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ModelConfig, Scheduler};
pub use decode::{beam_search, greedy_decode, sample_decode, Hypothesis, ModelStepper, StepModel};
pub use model::{forward_translate_logits, Model, Sample};
pub use optim::{cosine_lr, lsce_loss, pad_targets, smoothing_weights, warmup_cosine_lr, Adam};
pub use train::{vocab_sidecar, TrainState, Trainer};
