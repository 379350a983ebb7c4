//! Frame weighting and (attentive) statistics pooling.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::features::VoicePosteriorSequence;
use crate::linalg::{dot, Matrix};
use crate::math::{exp, sqrt};

/// Tolerance on `Σ_t w_t = 1` accepted by the pooling and statistics code.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

/// Frame-level outputs `h_t` of the TDNN, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLevelFeatureSequence {
    h: Matrix,
}

impl FrameLevelFeatureSequence {
    pub fn new(h: Matrix) -> Result<Self> {
        if h.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("frame-level features"));
        }
        Ok(Self { h })
    }

    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.h.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.h
    }
}

/// Non-negative per-frame weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameWeights {
    alpha: Vec<f64>,
}

impl FrameWeights {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::EmptyInput);
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("frame weights"));
        }
        if alpha.iter().any(|&a| a < 0.0) {
            return Err(Error::InvalidConfig("frame weights must be non-negative".into()));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightsNotNormalized(sum));
        }
        Ok(Self { alpha })
    }

    /// Rescales non-negative raw weights to unit sum.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidConfig("raw weights must be finite and non-negative".into()));
        }
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        Self::new(raw.into_iter().map(|a| a / sum).collect())
    }

    /// `α_t = 1/L`.
    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { alpha: vec![1.0 / len as f64; len] })
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Pooled mean and standard deviation vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PooledStats {
    /// `[μ; σ]`, the input of the first segment layer.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.mu.len());
        v.extend_from_slice(&self.mu);
        v.extend_from_slice(&self.sigma);
        v
    }
}

/// Weighted mean and standard deviation. The variance is accumulated in the
/// centered form `Σ w_t (h_t − μ)²`, equal to `Σ w_t h_t² − μ²` for unit-sum
/// weights but never negative.
pub(crate) fn weighted_moments(h: &Matrix, w: &[f64]) -> PooledStats {
    let d = h.cols();
    let mut mu = vec![0.0; d];
    for (row, &wt) in h.row_iter().zip(w) {
        crate::linalg::axpy(wt, row, &mut mu);
    }
    let mut var = vec![0.0; d];
    for (row, &wt) in h.row_iter().zip(w) {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mu) {
            let c = x - m;
            *v += wt * c * c;
        }
    }
    PooledStats { mu, sigma: var.into_iter().map(sqrt).collect() }
}

/// Mean and standard deviation with equal frame weights.
pub fn pool_stats(h: &FrameLevelFeatureSequence) -> PooledStats {
    let w = vec![1.0 / h.len() as f64; h.len()];
    weighted_moments(h.matrix(), &w)
}

/// Weighted mean and standard deviation.
pub fn pool_weighted_stats(h: &FrameLevelFeatureSequence, w: &FrameWeights) -> Result<PooledStats> {
    if w.len() != h.len() {
        return Err(Error::LengthMismatch { expected: h.len(), got: w.len() });
    }
    let sum: f64 = w.values().iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::WeightsNotNormalized(sum));
    }
    Ok(weighted_moments(h.matrix(), w.values()))
}

/// Softmax over frames, shifted by the maximum score.
pub fn attention_weights(e: &[f64]) -> Result<FrameWeights> {
    if e.is_empty() {
        return Err(Error::EmptyInput);
    }
    if e.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("attention scores"));
    }
    Ok(FrameWeights { alpha: softmax(e) })
}

pub(crate) fn softmax(e: &[f64]) -> Vec<f64> {
    let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = e.iter().map(|&x| exp(x - m)).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Renormalized product `α_t q_t / Σ_τ α_τ q_τ`.
pub fn combine_weights(alpha: &FrameWeights, q: &VoicePosteriorSequence) -> Result<FrameWeights> {
    if alpha.len() != q.len() {
        return Err(Error::LengthMismatch { expected: alpha.len(), got: q.len() });
    }
    let prod: Vec<f64> = alpha.values().iter().zip(q.values()).map(|(a, b)| a * b).collect();
    let z: f64 = prod.iter().sum();
    if !(z > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(FrameWeights { alpha: prod.into_iter().map(|p| p / z).collect() })
}

/// Pearson correlation of two equally long series.
pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: a.len() });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ca: Vec<f64> = a.iter().map(|x| x - ma).collect();
    let cb: Vec<f64> = b.iter().map(|x| x - mb).collect();
    let (saa, sbb) = (dot(&ca, &ca), dot(&cb, &cb));
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((dot(&ca, &cb) / sqrt(saa * sbb)).clamp(-1.0, 1.0))
}
