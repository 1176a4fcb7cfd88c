//! Dual-branch page classifier.
//!
//! A small convolutional stack produces a 576-d visual feature from a 4x
//! box-downscaled copy of the normalized screenshot. A two-layer
//! self-attention encoder (width 312) pools the CLS position, which is
//! projected to 128-d. The two are concatenated (704-d) and classified by a
//! 256-unit ReLU layer followed by a 2-way linear layer.
//!
//! Everything is f64 with hand-written backpropagation, verified against
//! central finite differences in [`gradcheck`].

pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod network;
mod params;
pub mod train;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network::{
    fuse_and_classify, predict, predict_example, predict_float, text_embedding, visual_features,
    AttackTarget, Classification, DualBranchTarget, Example, Mode, Prediction, VisualInput,
};
pub use params::{Gradients, ModelParams, Tensor};
pub use train::{
    class_weights_from_counts, compute_loss, train_epoch, EpochStats, OptimizerKind, TrainConfig,
    TrainState,
};
pub use vocab::{tokenize, TokenSequence, Vocabulary};

/// Index of the benign class in logits and probabilities.
pub const BENIGN: usize = 0;
/// Index of the malicious class.
pub const MALICIOUS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub text_pooled_dim: usize,
    pub text_proj_dim: usize,
    pub fused_dim: usize,
    pub head_hidden: usize,
    pub classes: usize,
    pub dropout_visual: f64,
    pub dropout_text: f64,
    pub dropout_fusion: f64,
    /// Output channels of each stride-2 3x3 conv block.
    pub conv_channels: Vec<usize>,
    /// Box-filter factor from the 960x540 canvas to the conv input.
    pub visual_downscale: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub text_ffn_dim: usize,
    pub max_tokens: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            visual_dim: 576,
            text_pooled_dim: 312,
            text_proj_dim: 128,
            fused_dim: 704,
            head_hidden: 256,
            classes: 2,
            dropout_visual: 0.3,
            dropout_text: 0.3,
            dropout_fusion: 0.6,
            conv_channels: vec![8, 16, 32, 32],
            visual_downscale: 4,
            text_layers: 2,
            text_heads: 4,
            text_ffn_dim: 624,
            max_tokens: vocab::MAX_TOKENS,
            vocab_size,
        }
    }

    /// Cheaper internals with the same interface dimensions; used for
    /// gradient checks and fast tests.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            conv_channels: vec![4, 8],
            text_layers: 2,
            text_ffn_dim: 64,
            ..Self::new(vocab_size)
        }
    }

    /// The full convolutional stack with the toy text encoder; the
    /// configuration trained on synthetic corpora.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            conv_channels: Self::new(vocab_size).conv_channels,
            ..Self::toy(vocab_size)
        }
    }

    pub fn without_dropout(mut self) -> Self {
        self.dropout_visual = 0.0;
        self.dropout_text = 0.0;
        self.dropout_fusion = 0.0;
        self
    }

    pub fn visual_input_dims(&self) -> (usize, usize) {
        (
            crate::imaging::NORMALIZED_WIDTH / self.visual_downscale,
            crate::imaging::NORMALIZED_HEIGHT / self.visual_downscale,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("model config: {m}")));
        if self.fused_dim != self.visual_dim + self.text_proj_dim {
            return fail(format!(
                "fused_dim {} != visual_dim {} + text_proj_dim {}",
                self.fused_dim, self.visual_dim, self.text_proj_dim
            ));
        }
        if self.classes != 2 {
            return fail("only binary classification is supported".into());
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return fail("conv_channels must be non-empty and positive".into());
        }
        if self.text_layers == 0 || self.text_heads == 0 || self.text_pooled_dim % self.text_heads != 0 {
            return fail("text width must divide evenly across heads".into());
        }
        if self.visual_downscale == 0
            || crate::imaging::NORMALIZED_WIDTH % self.visual_downscale != 0
            || crate::imaging::NORMALIZED_HEIGHT % self.visual_downscale != 0
        {
            return fail("visual_downscale must divide 960 and 540".into());
        }
        for p in [self.dropout_visual, self.dropout_text, self.dropout_fusion] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("dropout {p} outside [0, 1)"));
            }
        }
        if self.vocab_size < 3 || self.max_tokens == 0 {
            return fail("vocabulary must hold the special tokens".into());
        }
        Ok(())
    }
}
