//! Confidence-guided step-wise preference optimization on a synthetic
//! arithmetic reasoning task.
//!
//! Pipeline: [`corpus`] generates problems and gold solutions, [`model`]
//! pretrains a small transformer policy, [`confidence`] calibrates split and
//! stop thresholds from sampled token confidences, [`pairs`] builds
//! preference triplets scored by a [`reward`] model, [`trainer`] optimizes
//! the policy against a frozen reference, and [`eval`] measures the outcome.

pub mod confidence;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod model;
pub mod pairs;
pub mod reward;
pub mod rng;
pub mod trainer;

pub use confidence::{CalibrationReport, StepSegmentation, Thresholds};
pub use corpus::{CorpusConfig, ProblemInstance, TokenId, Tokenizer};
pub use error::{Error, Result};
pub use eval::{EvalReport, MarginReport, PositionalReport};
pub use model::{Checkpoint, ModelConfig, Policy, SampledSequence, SamplingConfig, StopReason};
pub use pairs::{BuildReport, PairBuilderConfig, PairDataset, PreferenceTriplet, SkipReason};
pub use reward::{McReward, RewardConfig, RewardModel};
pub use trainer::{BatchStats, TrainConfig};
