//! Unsupervised few-shot action recognition at desk scale: a small autodiff
//! engine, synthetic two-factor videos, two-stream contrastive pretraining,
//! hard-episode mining, action-appearance cross-attention, and episodic
//! meta-learning with a few-shot evaluation protocol.

pub mod tensor;
pub mod rng;
pub mod synthvid;
pub mod checkpoint;
pub mod streams;
pub mod contrastive;
pub mod mining;
pub mod a3m;
pub mod metalearn;
pub mod gradcheck;
