//! Dual-tower cross-modal keyword retriever.
//!
//! The speech tower runs a strided 1-D convolution stack, a per-frame MLP,
//! attention pooling, and an output projection; the text tower projects
//! hashed character n-gram features. Both towers land in one shared unit-norm
//! embedding space and are trained jointly with a 1-positive/10-negative
//! contrastive objective.

mod checkpoint;
pub(crate) mod featurize;
mod features;
mod forward;
mod loss;
mod optim;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use featurize::{featurize_text, normalize_keyword, TextFeaturizer};
pub use features::{read_features, write_features, FEATURE_MAGIC};
pub use forward::{encode_speech, encode_text};
pub use loss::{batch_loss, info_nce_from_logits, info_nce_loss, loss_and_grad};
pub use optim::{adamw_step, lr_at, AdamState};
pub use params::{ConvSpec, RetrieverDims, TowerParams};
pub use train::{train_retriever, StepLog, Trainer};

use crate::linalg::{l2_norm, normalize_in_place, Mat};
use crate::{Error, Result};

/// Number of negative keywords drawn per training sample.
pub const NEGATIVES_PER_SAMPLE: usize = 10;

/// Tolerance on the unit-norm invariant of embeddings.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// A unit-norm vector in the shared cross-modal embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wrap a vector that is already unit-norm (within [`NORM_TOLERANCE`]).
    pub fn try_new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        let n = l2_norm(&values);
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "embedding norm {n} is not unit within {NORM_TOLERANCE}"
            )));
        }
        Ok(Embedding(values))
    }

    /// Normalize an arbitrary non-zero vector into an embedding.
    pub fn from_unnormalized(mut values: Vec<f64>) -> Result<Self> {
        normalize_in_place(&mut values, "embedding")?;
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// One utterance's frontend feature matrix (T frames by `feat_dim` columns).
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub utterance_id: String,
    frames: Mat,
}

impl FeatureSequence {
    pub fn new(utterance_id: impl Into<String>, frames: Mat) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::Empty("feature sequence has no frames".into()));
        }
        if frames.cols() == 0 {
            return Err(Error::Empty("feature sequence has no columns".into()));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("feature sequence".into()));
        }
        Ok(FeatureSequence {
            utterance_id: utterance_id.into(),
            frames,
        })
    }

    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // T >= 1 by construction
    }

    pub fn feat_dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Hashed character n-gram features of one normalized keyword.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub keyword_text: String,
    vector: Vec<f64>,
}

impl TextFeatures {
    pub(crate) fn new(keyword_text: String, vector: Vec<f64>) -> Self {
        TextFeatures {
            keyword_text,
            vector,
        }
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// One contrastive training sample: an anchor feature sequence, its paired
/// keyword, and [`NEGATIVES_PER_SAMPLE`] distractor keywords.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub anchor: FeatureSequence,
    pub positive: TextFeatures,
    pub negatives: Vec<TextFeatures>,
}

impl ContrastiveBatch {
    pub fn new(
        anchor: FeatureSequence,
        positive: TextFeatures,
        negatives: Vec<TextFeatures>,
    ) -> Result<Self> {
        if negatives.len() != NEGATIVES_PER_SAMPLE {
            return Err(Error::InvalidArgument(format!(
                "expected {NEGATIVES_PER_SAMPLE} negatives, got {}",
                negatives.len()
            )));
        }
        for n in &negatives {
            if n.keyword_text == positive.keyword_text {
                return Err(Error::InvalidArgument(format!(
                    "negative keyword {:?} equals the positive",
                    n.keyword_text
                )));
            }
        }
        Ok(ContrastiveBatch {
            anchor,
            positive,
            negatives,
        })
    }

    /// Build a batch without the distinctness check. Intended for diagnostic
    /// degenerate batches (e.g. gradient checks with identical candidates).
    pub fn new_unchecked(
        anchor: FeatureSequence,
        positive: TextFeatures,
        negatives: Vec<TextFeatures>,
    ) -> Self {
        ContrastiveBatch {
            anchor,
            positive,
            negatives,
        }
    }
}

/// Optimizer and schedule settings for retriever training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 3e-4,
            weight_decay: 0.01,
            warmup_ratio: 0.01,
            total_steps: 1000,
            batch_size: 8,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidArgument("lr0 must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidArgument(
                "warmup_ratio must be in [0, 1)".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("betas must be in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "weight_decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}
