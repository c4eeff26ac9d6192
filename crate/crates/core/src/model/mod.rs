//! Tiny decoder-only language model: training, sampling with confidence
//! recording, teacher-forced scoring, and checkpoints.

mod checkpoint;
mod config;
mod optim;
mod pretrain;
mod sampling;
mod scalar;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use config::{ModelConfig, ParamLayout, TensorInfo};
pub use optim::{clip_grad_norm, learning_rate, AdamW, AdamWConfig, Schedule};
pub use pretrain::{pretrain, solution_loss, PretrainConfig, PretrainReport, PretrainStep};
pub use sampling::{
    argmax, choose_token, continue_generation, sample, sample_with, sequence_logprob, softmax,
    top_k_from_logits, ConfidenceMode, LanguageModel, Policy, SampledSequence, SamplingConfig,
    StopReason,
};
pub use scalar::Scalar;
pub use transformer::{init_weights, ForwardPass, KvCache, PackedBatch, Target, Transformer};
