//! Two-stage training for joint multi-intent detection and slot filling:
//! word-level self-supervised pre-training followed by prediction-aware
//! contrastive fine-tuning.

pub mod autograd;
pub mod contrastive;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod wordlevel;
