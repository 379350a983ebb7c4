//! Cross-entropy training with momentum SGD on random fixed-length chunks.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{EmbedNetConfig, EmbedNetParams, Pooling};
use super::pooling::softmax;
use crate::error::{Error, Result};
use crate::features::AcousticFrameSequence;
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate is multiplied by `lr_decay` every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub chunk_len: usize,
    pub batch_size: usize,
    /// Momentum of the running normalization statistics.
    pub norm_momentum: f64,
    /// Element-wise gradient clipping bound.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 0.5,
            decay_every: 10,
            chunk_len: 100,
            batch_size: 8,
            norm_momentum: 0.1,
            grad_clip: 5.0,
        }
    }
}

/// A labelled training utterance.
#[derive(Clone, Copy, Debug)]
pub struct LabelledUtterance<'a> {
    pub frames: &'a AcousticFrameSequence,
    pub speaker: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean chunk cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// Chunk classification accuracy per epoch.
    pub epoch_accuracy: Vec<f64>,
}

fn check_corpus(corpus: &[LabelledUtterance<'_>], arch: &EmbedNetConfig) -> Result<()> {
    let mut counts = vec![0usize; arch.num_speakers];
    for u in corpus {
        if u.speaker >= arch.num_speakers {
            return Err(Error::DegenerateCorpus(alloc::format!(
                "speaker label {} but the network has {} outputs",
                u.speaker,
                arch.num_speakers
            )));
        }
        if u.frames.dim() != arch.input_dim {
            return Err(Error::ShapeMismatch(alloc::format!(
                "utterance has {}-dim frames, network expects {}",
                u.frames.dim(),
                arch.input_dim
            )));
        }
        counts[u.speaker] += 1;
    }
    if arch.num_speakers < 2 || counts.iter().any(|&c| c < 2) {
        return Err(Error::DegenerateCorpus("need at least two speakers with two utterances each".into()));
    }
    Ok(())
}

/// Trains an embedding network; `arch.attentive` selects attentive pooling.
pub fn train_embed_network(
    corpus: &[LabelledUtterance<'_>],
    arch: &EmbedNetConfig,
    cfg: &TrainConfig,
) -> Result<(EmbedNetParams, TrainReport)> {
    arch.validate()?;
    check_corpus(corpus, arch)?;
    if cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidConfig("batch size, epochs and learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = EmbedNetParams::init(arch, &mut rng)?;
    let context = params.total_context();
    if cfg.chunk_len < context {
        return Err(Error::TooShort { needed: context, got: cfg.chunk_len });
    }
    if let Some(u) = corpus.iter().find(|u| u.frames.len() < context) {
        return Err(Error::TooShort { needed: context, got: u.frames.len() });
    }
    let pooling = if arch.attentive { Pooling::Internal } else { Pooling::Uniform };
    let mut velocity = params.zeros_like();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * crate::math::pow(cfg.lr_decay, (epoch / cfg.decay_every.max(1)) as f64);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let chunks: Vec<Matrix> = batch
                .iter()
                .map(|&i| {
                    let frames = corpus[i].frames;
                    let len = cfg.chunk_len.min(frames.len());
                    let start = rng.random_range(0..=frames.len() - len);
                    let rows: Vec<&[f64]> = (start..start + len).map(|t| frames.frame(t)).collect();
                    Matrix::from_rows(&rows).expect("rows share one dimension")
                })
                .collect();
            let inputs: Vec<&Matrix> = chunks.iter().collect();
            let caches = params.forward_train(&inputs, pooling, cfg.norm_momentum)?;
            let mut grad = params.zeros_like();
            for (&i, cache) in batch.iter().zip(&caches) {
                let label = corpus[i].speaker;
                loss_sum += params.backward(cache, label, &mut grad);
                let logits = &cache.segment.as_ref().expect("segment computed").logits;
                if argmax(logits) == label {
                    correct += 1;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for ((p, g), v) in params.tensors_mut().into_iter().zip(grad.tensors()).zip(velocity.tensors_mut()) {
                for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    let gi = (gi * scale).clamp(-cfg.grad_clip, cfg.grad_clip);
                    *vi = cfg.momentum * *vi - lr * gi;
                    *pi += *vi;
                }
            }
        }
        report.epoch_loss.push(loss_sum / corpus.len() as f64);
        report.epoch_accuracy.push(correct as f64 / corpus.len() as f64);
        if !report.epoch_loss.last().is_some_and(|l| l.is_finite()) {
            return Err(Error::NonFinite("training loss"));
        }
    }
    Ok((params, report))
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().fold(0, |best, (i, &x)| if x > xs[best] { i } else { best })
}

/// Speaker posteriors of a whole utterance under the network's own pooling.
pub fn speaker_posteriors(params: &EmbedNetParams, utt: &AcousticFrameSequence) -> Result<Vec<f64>> {
    let pooling = if params.is_attentive() { Pooling::Internal } else { Pooling::Uniform };
    let cache = params.forward(utt.frames(), pooling, true)?;
    Ok(softmax(&cache.segment.expect("segment computed").logits))
}

/// Fraction of utterances whose most probable speaker is the labelled one.
pub fn classification_accuracy(params: &EmbedNetParams, corpus: &[LabelledUtterance<'_>]) -> Result<f64> {
    let mut correct = 0usize;
    for u in corpus {
        if argmax(&speaker_posteriors(params, u.frames)?) == u.speaker {
            correct += 1;
        }
    }
    Ok(correct as f64 / corpus.len().max(1) as f64)
}
