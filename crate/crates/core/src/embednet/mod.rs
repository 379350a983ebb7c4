//! Deep speaker embedding network with optional attentive statistics pooling.
//!
//! A TDNN maps acoustic frames to frame-level features `h_t`. The pooling
//! layer reduces them to a weighted mean and standard deviation, with weights
//! that are uniform, produced by the network's own attention model, or
//! supplied from outside (for instance by another network's attention model).
//! Two fully connected layers and a softmax over training speakers follow;
//! the affine output of the first one is the speaker embedding.

mod network;
mod pooling;
mod train;

pub use network::{
    attention_scores, utterance_gradient, utterance_loss, AttentionParams, DenseLayer, EmbedNetConfig,
    EmbedNetParams, NormStats, Pooling, TdnnLayer, NORM_EPS,
};
pub use pooling::{
    attention_weights, combine_weights, pool_stats, pool_weighted_stats, FrameLevelFeatureSequence,
    FrameWeights, PooledStats, WEIGHT_SUM_TOL,
};
pub use train::{
    classification_accuracy, speaker_posteriors, train_embed_network, LabelledUtterance, TrainConfig,
    TrainReport,
};

pub(crate) use pooling::pearson;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::features::AcousticFrameSequence;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    pub x: Vec<f64>,
}

/// Where the pooling weights of an extraction come from.
#[derive(Clone, Debug)]
pub enum WeightSource {
    Uniform,
    Internal,
    External(FrameWeights),
}

/// Frame-level features `h_t`, one per input frame (edges replicated).
pub fn tdnn_forward(features: &AcousticFrameSequence, params: &EmbedNetParams) -> Result<FrameLevelFeatureSequence> {
    let cache = params.forward(features.frames(), Pooling::Uniform, false)?;
    FrameLevelFeatureSequence::new(cache.frame_features().clone())
}

pub fn extract_embedding(
    utt: &AcousticFrameSequence,
    params: &EmbedNetParams,
    source: &WeightSource,
) -> Result<SpeakerEmbedding> {
    let pooling = match source {
        WeightSource::Uniform => Pooling::Uniform,
        WeightSource::Internal => Pooling::Internal,
        WeightSource::External(w) => Pooling::External(w),
    };
    let cache = params.forward(utt.frames(), pooling, true)?;
    let x = cache.segment.expect("segment computed").embed_pre;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding"));
    }
    Ok(SpeakerEmbedding { x })
}

/// Attention weights `α_t` the network assigns to the frames of `utt`.
pub fn export_attention_weights(utt: &AcousticFrameSequence, params: &EmbedNetParams) -> Result<FrameWeights> {
    let cache = params.forward(utt.frames(), Pooling::Internal, false)?;
    FrameWeights::new(cache.alpha)
}
