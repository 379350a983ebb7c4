//! Network parameters with batched forward and per-utterance backward passes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::pooling::{softmax, weighted_moments, FrameLevelFeatureSequence, FrameWeights, PooledStats};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::math::{ln, sqrt};

pub const NORM_EPS: f64 = 1e-5;

/// Architecture of the embedding network.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedNetConfig {
    pub input_dim: usize,
    /// Frame offsets spliced by each TDNN layer.
    pub tdnn_contexts: Vec<Vec<isize>>,
    /// Output width of each TDNN layer; the last one is the pooled feature dimension.
    pub tdnn_dims: Vec<usize>,
    pub attention_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_speakers: usize,
    pub attentive: bool,
}

impl EmbedNetConfig {
    /// Desk-scale defaults: TDNN width 64, pooled dimension 128, embedding 32, attention 16.
    pub fn desk(input_dim: usize, num_speakers: usize, attentive: bool) -> Self {
        Self {
            input_dim,
            tdnn_contexts: vec![vec![-2, -1, 0, 1, 2], vec![-2, 0, 2], vec![-3, 0, 3], vec![0], vec![0]],
            tdnn_dims: vec![64, 64, 64, 64, 128],
            attention_dim: 16,
            embed_dim: 32,
            hidden_dim: 32,
            num_speakers,
            attentive,
        }
    }

    /// Layer sizes of the published x-vector recipe (512 wide, 1500 pooled, 512 embedding, 64 attention).
    pub fn full_scale(input_dim: usize, num_speakers: usize, attentive: bool) -> Self {
        Self {
            tdnn_dims: vec![512, 512, 512, 512, 1500],
            attention_dim: 64,
            embed_dim: 512,
            hidden_dim: 512,
            ..Self::desk(input_dim, num_speakers, attentive)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.input_dim == 0 || self.tdnn_dims.is_empty() || self.tdnn_dims.contains(&0) {
            return bad("TDNN dimensions must be positive");
        }
        if self.tdnn_contexts.len() != self.tdnn_dims.len() || self.tdnn_contexts.iter().any(|c| c.is_empty()) {
            return bad("each TDNN layer needs a non-empty context");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.num_speakers < 2 {
            return bad("segment layers need positive sizes and at least two speakers");
        }
        if self.attentive && self.attention_dim == 0 {
            return bad("attention needs at least one hidden node");
        }
        Ok(())
    }
}

/// Per-feature normalization `(x − mean) / sqrt(var + ε)` with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl NormStats {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.var.iter().map(|v| 1.0 / sqrt(v + NORM_EPS)).collect()
    }

    fn apply(&self, scales: &[f64], x: &mut [f64]) {
        for ((xi, m), s) in x.iter_mut().zip(&self.mean).zip(scales) {
            *xi = (*xi - m) * s;
        }
    }

    /// Exponential moving average towards the moments of `rows`.
    fn update<'a>(&mut self, rows: impl Iterator<Item = &'a [f64]>, momentum: f64) {
        let d = self.dim();
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for r in rows {
            n += 1;
            for ((s, q), &x) in sum.iter_mut().zip(sq.iter_mut()).zip(r) {
                *s += x;
                *q += x * x;
            }
        }
        if n == 0 {
            return;
        }
        let inv = 1.0 / n as f64;
        for j in 0..d {
            let m = sum[j] * inv;
            let v = (sq[j] * inv - m * m).max(0.0);
            self.mean[j] += momentum * (m - self.mean[j]);
            self.var[j] += momentum * (v - self.var[j]);
        }
    }
}

/// Time-delay layer: splice, affine, ReLU, normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct TdnnLayer {
    pub offsets: Vec<isize>,
    /// `out × (offsets · in)`, spliced blocks ordered as `offsets`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub norm: NormStats,
}

impl TdnnLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols() / self.offsets.len()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn splice(&self, x: &Matrix) -> Matrix {
        let l = x.rows();
        let din = x.cols();
        let mut s = Matrix::zeros(l, din * self.offsets.len());
        for t in 0..l {
            let row = s.row_mut(t);
            for (b, &o) in self.offsets.iter().enumerate() {
                let src = (t as isize + o).clamp(0, l as isize - 1) as usize;
                row[b * din..(b + 1) * din].copy_from_slice(x.row(src));
            }
        }
        s
    }

    fn context_span(&self) -> usize {
        let lo = *self.offsets.iter().min().unwrap_or(&0);
        let hi = *self.offsets.iter().max().unwrap_or(&0);
        (hi - lo) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        axpy(1.0, &self.bias, &mut y);
        y
    }
}

/// Attention model `e_t = vᵀ f(W h_t + b) + k` with `f` = ReLU then normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
    pub k: f64,
    pub norm: NormStats,
}

impl AttentionParams {
    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    /// Activated hidden layer `f(W h_t + b)`, one row per frame.
    fn hidden(&self, h: &Matrix) -> Matrix {
        let mut pre = h.matmul_t(&self.w);
        for r in 0..pre.rows() {
            axpy(1.0, &self.b, pre.row_mut(r));
        }
        relu_norm_rows(&pre, &self.norm)
    }

    fn scores_from_hidden(&self, f: &Matrix) -> Vec<f64> {
        f.row_iter().map(|row| dot(&self.v, row) + self.k).collect()
    }
}

/// All parameters of an embedding network.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedNetParams {
    pub tdnn: Vec<TdnnLayer>,
    pub attention: Option<AttentionParams>,
    /// Pooled statistics to embedding; the embedding is this layer's affine output.
    pub embed: DenseLayer,
    pub embed_norm: NormStats,
    pub hidden: DenseLayer,
    pub hidden_norm: NormStats,
    pub output: DenseLayer,
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for x in m.as_mut_slice() {
        let z: f64 = StandardNormal.sample(rng);
        *x = z * std;
    }
    m
}

impl EmbedNetParams {
    /// He-initialized weights, zero biases, identity normalization statistics.
    pub fn init<R: Rng>(cfg: &EmbedNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut tdnn = Vec::with_capacity(cfg.tdnn_dims.len());
        let mut din = cfg.input_dim;
        for (ctx, &dout) in cfg.tdnn_contexts.iter().zip(&cfg.tdnn_dims) {
            let fan_in = din * ctx.len();
            tdnn.push(TdnnLayer {
                offsets: ctx.clone(),
                weight: gaussian_matrix(rng, dout, fan_in, sqrt(2.0 / fan_in as f64)),
                bias: vec![0.0; dout],
                norm: NormStats::new(dout),
            });
            din = dout;
        }
        let dh = din;
        let attention = cfg.attentive.then(|| {
            let da = cfg.attention_dim;
            let w = gaussian_matrix(rng, da, dh, sqrt(2.0 / dh as f64));
            let v = gaussian_matrix(rng, 1, da, sqrt(1.0 / da as f64)).into_vec();
            AttentionParams { w, b: vec![0.0; da], v, k: 0.0, norm: NormStats::new(da) }
        });
        let dense = |rng: &mut R, out: usize, inp: usize, gain: f64| DenseLayer {
            weight: gaussian_matrix(rng, out, inp, sqrt(gain / inp as f64)),
            bias: vec![0.0; out],
        };
        let embed = dense(rng, cfg.embed_dim, 2 * dh, 2.0);
        let hidden = dense(rng, cfg.hidden_dim, cfg.embed_dim, 2.0);
        let output = dense(rng, cfg.num_speakers, cfg.hidden_dim, 1.0);
        Ok(Self {
            tdnn,
            attention,
            embed,
            embed_norm: NormStats::new(cfg.embed_dim),
            hidden,
            hidden_norm: NormStats::new(cfg.hidden_dim),
            output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.tdnn.first().map_or(0, TdnnLayer::input_dim)
    }

    pub fn frame_feature_dim(&self) -> usize {
        self.tdnn.last().map_or(0, TdnnLayer::output_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.weight.rows()
    }

    pub fn num_speakers(&self) -> usize {
        self.output.weight.rows()
    }

    pub fn is_attentive(&self) -> bool {
        self.attention.is_some()
    }

    /// Frames of temporal context consumed by the TDNN stack.
    pub fn total_context(&self) -> usize {
        self.tdnn.iter().map(TdnnLayer::context_span).sum::<usize>() + 1
    }

    /// Trainable tensors in a fixed order (normalization statistics excluded).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.tdnn {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        if let Some(a) = &self.attention {
            out.push(a.w.as_slice());
            out.push(&a.b);
            out.push(&a.v);
            out.push(core::slice::from_ref(&a.k));
        }
        for d in [&self.embed, &self.hidden, &self.output] {
            out.push(d.weight.as_slice());
            out.push(&d.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.tdnn {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        if let Some(a) = &mut self.attention {
            out.push(a.w.as_mut_slice());
            out.push(&mut a.b);
            out.push(&mut a.v);
            out.push(core::slice::from_mut(&mut a.k));
        }
        for d in [&mut self.embed, &mut self.hidden, &mut self.output] {
            out.push(d.weight.as_mut_slice());
            out.push(&mut d.bias);
        }
        out
    }

    /// A zero-valued copy used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "network expects {}-dim frames, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let needed = self.total_context();
        if x.rows() < needed {
            return Err(Error::TooShort { needed, got: x.rows() });
        }
        Ok(())
    }
}

/// How the pooling layer weights frames.
#[derive(Clone, Copy, Debug)]
pub enum Pooling<'a> {
    Uniform,
    /// The network's own attention model.
    Internal,
    External(&'a FrameWeights),
}

pub(crate) struct TdnnCache {
    spliced: Matrix,
    pre: Matrix,
    out: Matrix,
}

pub(crate) struct AttentionCache {
    pre: Matrix,
    f: Matrix,
}

pub(crate) struct SegmentCache {
    pooled: Vec<f64>,
    pub(crate) embed_pre: Vec<f64>,
    embed_out: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden_out: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

/// Everything the backward pass needs for one utterance.
pub(crate) struct ForwardCache {
    tdnn: Vec<TdnnCache>,
    pub(crate) attention: Option<AttentionCache>,
    pub(crate) alpha: Vec<f64>,
    /// Whether α depends on the parameters (internal attention).
    alpha_trainable: bool,
    pub(crate) stats: PooledStats,
    pub(crate) segment: Option<SegmentCache>,
}

impl ForwardCache {
    pub(crate) fn frame_features(&self) -> &Matrix {
        &self.tdnn.last().expect("at least one TDNN layer").out
    }
}

fn relu_norm_rows(pre: &Matrix, norm: &NormStats) -> Matrix {
    let scales = norm.scales();
    let mut out = pre.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        row.iter_mut().for_each(|x| *x = x.max(0.0));
        norm.apply(&scales, row);
    }
    out
}

fn relu_norm(pre: &[f64], norm: &NormStats) -> Vec<f64> {
    let mut out: Vec<f64> = pre.iter().map(|x| x.max(0.0)).collect();
    norm.apply(&norm.scales(), &mut out);
    out
}

fn tdnn_pre(layer: &TdnnLayer, input: &Matrix) -> (Matrix, Matrix) {
    let spliced = layer.splice(input);
    let mut pre = spliced.matmul_t(&layer.weight);
    for r in 0..pre.rows() {
        axpy(1.0, &layer.bias, pre.row_mut(r));
    }
    (spliced, pre)
}

fn relu_rows(m: &Matrix) -> impl Iterator<Item = Vec<f64>> + '_ {
    m.row_iter().map(|r| r.iter().map(|x| x.max(0.0)).collect())
}

impl EmbedNetParams {
    fn check_pooling(&self, l: usize, pooling: Pooling<'_>) -> Result<()> {
        match pooling {
            Pooling::Internal if self.attention.is_none() => Err(Error::MissingAttention),
            Pooling::External(w) if w.len() != l => Err(Error::LengthMismatch { expected: l, got: w.len() }),
            _ => Ok(()),
        }
    }

    fn attention_pre(&self, h: &Matrix) -> Matrix {
        let att = self.attention.as_ref().expect("checked by check_pooling");
        let mut pre = h.matmul_t(&att.w);
        for r in 0..pre.rows() {
            axpy(1.0, &att.b, pre.row_mut(r));
        }
        pre
    }

    /// Attention (when internal), frame weights and pooled statistics.
    fn pool(&self, tdnn: Vec<TdnnCache>, att_pre: Option<Matrix>, pooling: Pooling<'_>) -> ForwardCache {
        let l = tdnn[0].pre.rows();
        let (attention, alpha, alpha_trainable) = match (att_pre, pooling) {
            (Some(pre), _) => {
                let att = self.attention.as_ref().expect("attention present");
                let f = relu_norm_rows(&pre, &att.norm);
                let scores = att.scores_from_hidden(&f);
                let alpha = softmax(&scores);
                (Some(AttentionCache { pre, f }), alpha, true)
            }
            (None, Pooling::External(w)) => (None, w.values().to_vec(), false),
            _ => (None, vec![1.0 / l as f64; l], false),
        };
        let stats = weighted_moments(&tdnn.last().expect("at least one layer").out, &alpha);
        ForwardCache { tdnn, attention, alpha, alpha_trainable, stats, segment: None }
    }

    /// Inference-mode forward of a single utterance with frozen statistics.
    pub(crate) fn forward(&self, x: &Matrix, pooling: Pooling<'_>, with_segment: bool) -> Result<ForwardCache> {
        self.check_input(x)?;
        self.check_pooling(x.rows(), pooling)?;
        let mut tdnn: Vec<TdnnCache> = Vec::with_capacity(self.tdnn.len());
        for layer in &self.tdnn {
            let input = tdnn.last().map_or(x, |c| &c.out);
            let (spliced, pre) = tdnn_pre(layer, input);
            let out = relu_norm_rows(&pre, &layer.norm);
            tdnn.push(TdnnCache { spliced, pre, out });
        }
        let att_pre = matches!(pooling, Pooling::Internal).then(|| self.attention_pre(&tdnn.last().unwrap().out));
        let mut cache = self.pool(tdnn, att_pre, pooling);
        if with_segment {
            let pooled = cache.stats.concat();
            let embed_pre = self.embed.forward(&pooled);
            let embed_out = relu_norm(&embed_pre, &self.embed_norm);
            let hidden_pre = self.hidden.forward(&embed_out);
            let hidden_out = relu_norm(&hidden_pre, &self.hidden_norm);
            let logits = self.output.forward(&hidden_out);
            cache.segment = Some(SegmentCache { pooled, embed_pre, embed_out, hidden_pre, hidden_out, logits });
        }
        Ok(cache)
    }

    /// Training-mode forward of a mini-batch.
    ///
    /// Every normalization layer first moves its running statistics towards the
    /// batch moments of its input (the ReLU outputs), then normalizes with the
    /// updated statistics. Gradients treat the statistics as constants.
    pub(crate) fn forward_train(
        &mut self,
        inputs: &[&Matrix],
        pooling: Pooling<'_>,
        momentum: f64,
    ) -> Result<Vec<ForwardCache>> {
        for x in inputs {
            self.check_input(x)?;
            self.check_pooling(x.rows(), pooling)?;
        }
        let mut layers: Vec<Vec<TdnnCache>> = inputs.iter().map(|_| Vec::new()).collect();
        for li in 0..self.tdnn.len() {
            let pres: Vec<(Matrix, Matrix)> = inputs
                .iter()
                .zip(&layers)
                .map(|(x, done)| tdnn_pre(&self.tdnn[li], done.last().map_or(*x, |c| &c.out)))
                .collect();
            let relu: Vec<Vec<f64>> = pres.iter().flat_map(|(_, p)| relu_rows(p)).collect();
            self.tdnn[li].norm.update(relu.iter().map(Vec::as_slice), momentum);
            for (done, (spliced, pre)) in layers.iter_mut().zip(pres) {
                let out = relu_norm_rows(&pre, &self.tdnn[li].norm);
                done.push(TdnnCache { spliced, pre, out });
            }
        }
        let att_pre: Vec<Option<Matrix>> = layers
            .iter()
            .map(|c| matches!(pooling, Pooling::Internal).then(|| self.attention_pre(&c.last().unwrap().out)))
            .collect();
        if let Some(att) = self.attention.as_mut().filter(|_| matches!(pooling, Pooling::Internal)) {
            let relu: Vec<Vec<f64>> = att_pre.iter().flatten().flat_map(relu_rows).collect();
            att.norm.update(relu.iter().map(Vec::as_slice), momentum);
        }
        let mut caches: Vec<ForwardCache> =
            layers.into_iter().zip(att_pre).map(|(t, a)| self.pool(t, a, pooling)).collect();

        let pooled: Vec<Vec<f64>> = caches.iter().map(|c| c.stats.concat()).collect();
        let embed_pre: Vec<Vec<f64>> = pooled.iter().map(|p| self.embed.forward(p)).collect();
        let relu: Vec<Vec<f64>> = embed_pre.iter().map(|v| v.iter().map(|x| x.max(0.0)).collect()).collect();
        self.embed_norm.update(relu.iter().map(Vec::as_slice), momentum);
        let embed_out: Vec<Vec<f64>> = embed_pre.iter().map(|p| relu_norm(p, &self.embed_norm)).collect();
        let hidden_pre: Vec<Vec<f64>> = embed_out.iter().map(|e| self.hidden.forward(e)).collect();
        let relu: Vec<Vec<f64>> = hidden_pre.iter().map(|v| v.iter().map(|x| x.max(0.0)).collect()).collect();
        self.hidden_norm.update(relu.iter().map(Vec::as_slice), momentum);
        let segs = pooled.into_iter().zip(embed_pre).zip(embed_out).zip(hidden_pre);
        for (c, (((pooled, embed_pre), embed_out), hidden_pre)) in caches.iter_mut().zip(segs) {
            let hidden_out = relu_norm(&hidden_pre, &self.hidden_norm);
            let logits = self.output.forward(&hidden_out);
            c.segment = Some(SegmentCache { pooled, embed_pre, embed_out, hidden_pre, hidden_out, logits });
        }
        Ok(caches)
    }

    /// Pooled statistics to `(embedding, logits)`.
    pub fn segment_forward(&self, stats: &PooledStats) -> Result<(Vec<f64>, Vec<f64>)> {
        let pooled = stats.concat();
        if pooled.len() != self.embed.weight.cols() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "segment layers expect {} pooled values, got {}",
                self.embed.weight.cols(),
                pooled.len()
            )));
        }
        let embed = self.embed.forward(&pooled);
        let hidden = relu_norm(&self.hidden.forward(&relu_norm(&embed, &self.embed_norm)), &self.hidden_norm);
        let logits = self.output.forward(&hidden);
        Ok((embed, logits))
    }

    /// Cross-entropy loss of one utterance; gradients are added into `grad`.
    pub(crate) fn backward(&self, cache: &ForwardCache, label: usize, grad: &mut EmbedNetParams) -> f64 {
        let seg = cache.segment.as_ref().expect("backward needs the segment forward");
        let p = softmax(&seg.logits);
        let loss = -ln(p[label].max(f64::MIN_POSITIVE));
        let mut d_logits = p;
        d_logits[label] -= 1.0;

        let d_hidden_out = dense_backward(&self.output, &mut grad.output, &d_logits, &seg.hidden_out);
        let d_hidden_pre = relu_norm_backward(&d_hidden_out, &seg.hidden_pre, &self.hidden_norm);
        let d_embed_out = dense_backward(&self.hidden, &mut grad.hidden, &d_hidden_pre, &seg.embed_out);
        let d_embed_pre = relu_norm_backward(&d_embed_out, &seg.embed_pre, &self.embed_norm);
        let d_pooled = dense_backward(&self.embed, &mut grad.embed, &d_embed_pre, &seg.pooled);

        let h = cache.frame_features();
        let dh_dim = h.cols();
        let (d_mu, d_sigma) = d_pooled.split_at(dh_dim);
        let mu = &cache.stats.mu;
        let d_var: Vec<f64> = d_sigma
            .iter()
            .zip(&cache.stats.sigma)
            .map(|(&ds, &s)| if s > 0.0 { ds / (2.0 * s) } else { 0.0 })
            .collect();
        let mut d_h = Matrix::zeros(h.rows(), dh_dim);
        let mut d_alpha = vec![0.0; h.rows()];
        for t in 0..h.rows() {
            let a = cache.alpha[t];
            let row = h.row(t);
            let drow = d_h.row_mut(t);
            let mut da = 0.0;
            for j in 0..dh_dim {
                let c = row[j] - mu[j];
                drow[j] = a * (d_mu[j] + 2.0 * d_var[j] * c);
                da += d_mu[j] * row[j] + d_var[j] * c * c;
            }
            d_alpha[t] = da;
        }

        if cache.alpha_trainable {
            let att = self.attention.as_ref().expect("internal pooling implies attention");
            let ac = cache.attention.as_ref().expect("attention cache");
            let g = grad.attention.as_mut().expect("gradient mirrors parameters");
            let mean_da: f64 = cache.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
            let scales = att.norm.scales();
            for t in 0..h.rows() {
                let de = cache.alpha[t] * (d_alpha[t] - mean_da);
                if de == 0.0 {
                    continue;
                }
                g.k += de;
                axpy(de, ac.f.row(t), &mut g.v);
                let pre = ac.pre.row(t);
                let d_pre: Vec<f64> = (0..att.hidden_dim())
                    .map(|i| if pre[i] > 0.0 { de * att.v[i] * scales[i] } else { 0.0 })
                    .collect();
                g.w.add_outer(1.0, &d_pre, h.row(t));
                axpy(1.0, &d_pre, &mut g.b);
                let d_row = d_h.row_mut(t);
                for (i, &dp) in d_pre.iter().enumerate() {
                    if dp != 0.0 {
                        axpy(dp, att.w.row(i), d_row);
                    }
                }
            }
        }

        let mut d_out = d_h;
        for li in (0..self.tdnn.len()).rev() {
            let layer = &self.tdnn[li];
            let lc = &cache.tdnn[li];
            let g = &mut grad.tdnn[li];
            let scales = layer.norm.scales();
            let mut d_pre = d_out;
            for t in 0..d_pre.rows() {
                let pre = lc.pre.row(t);
                for ((d, &p), &s) in d_pre.row_mut(t).iter_mut().zip(pre).zip(&scales) {
                    *d = if p > 0.0 { *d * s } else { 0.0 };
                }
            }
            for t in 0..d_pre.rows() {
                let dp = d_pre.row(t);
                axpy(1.0, dp, &mut g.bias);
                let sp = lc.spliced.row(t);
                for (o, &d) in dp.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, sp, g.weight.row_mut(o));
                    }
                }
            }
            if li == 0 {
                break;
            }
            let din = layer.input_dim();
            let l = d_pre.rows();
            let mut d_in = Matrix::zeros(l, din);
            let mut d_spliced = vec![0.0; layer.weight.cols()];
            for t in 0..l {
                d_spliced.iter_mut().for_each(|x| *x = 0.0);
                for (o, &d) in d_pre.row(t).iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, layer.weight.row(o), &mut d_spliced);
                    }
                }
                for (b, &off) in layer.offsets.iter().enumerate() {
                    let src = (t as isize + off).clamp(0, l as isize - 1) as usize;
                    axpy(1.0, &d_spliced[b * din..(b + 1) * din], d_in.row_mut(src));
                }
            }
            d_out = d_in;
        }
        loss
    }
}

fn dense_backward(layer: &DenseLayer, grad: &mut DenseLayer, d_out: &[f64], input: &[f64]) -> Vec<f64> {
    grad.weight.add_outer(1.0, d_out, input);
    axpy(1.0, d_out, &mut grad.bias);
    layer.weight.t_matvec(d_out)
}

fn relu_norm_backward(d_out: &[f64], pre: &[f64], norm: &NormStats) -> Vec<f64> {
    d_out
        .iter()
        .zip(pre)
        .zip(norm.scales())
        .map(|((&d, &p), s)| if p > 0.0 { d * s } else { 0.0 })
        .collect()
}

/// Attention scores `e_t` for precomputed frame-level features.
pub fn attention_scores(h: &FrameLevelFeatureSequence, ap: &AttentionParams) -> Result<Vec<f64>> {
    if h.dim() != ap.w.cols() || ap.b.len() != ap.w.rows() || ap.v.len() != ap.w.rows() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "attention expects {}-dim features, got {}",
            ap.w.cols(),
            h.dim()
        )));
    }
    Ok(ap.scores_from_hidden(&ap.hidden(h.matrix())))
}

/// Cross-entropy of one utterance with frozen statistics.
pub fn utterance_loss(params: &EmbedNetParams, x: &Matrix, label: usize) -> Result<f64> {
    let pooling = if params.is_attentive() { Pooling::Internal } else { Pooling::Uniform };
    let cache = params.forward(x, pooling, true)?;
    let p = softmax(&cache.segment.as_ref().expect("segment computed").logits);
    Ok(-ln(p[label].max(f64::MIN_POSITIVE)))
}

/// Loss and analytic gradient of one utterance with frozen statistics.
pub fn utterance_gradient(params: &EmbedNetParams, x: &Matrix, label: usize) -> Result<(f64, EmbedNetParams)> {
    if label >= params.num_speakers() {
        return Err(Error::InvalidConfig(alloc::format!("label {label} out of range")));
    }
    let pooling = if params.is_attentive() { Pooling::Internal } else { Pooling::Uniform };
    let cache = params.forward(x, pooling, true)?;
    let mut grad = params.zeros_like();
    let loss = params.backward(&cache, label, &mut grad);
    Ok((loss, grad))
}
