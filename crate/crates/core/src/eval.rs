//! Trial bookkeeping and detection metrics.

use alloc::string::String;
use alloc::vec::Vec;

use crate::embednet::{pearson, FrameWeights};
use crate::error::{Error, Result};
use crate::features::VoicePosteriorSequence;
use crate::math::ln;

/// Target priors of the two operating points averaged by [`compute_min_cprimary`].
pub const CPRIMARY_TARGET_PRIORS: [f64; 2] = [0.01, 0.005];

/// Posteriors are clipped to `[ε, 1 − ε]` before taking log-odds.
pub const LOG_ODDS_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub score: f64,
    pub target: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialScoreSet {
    pub entries: Vec<Trial>,
}

impl TrialScoreSet {
    pub fn new(entries: Vec<Trial>) -> Self {
        Self { entries }
    }

    /// Anonymous trials from bare target and non-target scores.
    pub fn from_scores(targets: &[f64], nontargets: &[f64]) -> Self {
        let mk = |score: f64, target: bool| Trial { enroll: String::new(), test: String::new(), score, target };
        let entries = targets.iter().map(|&s| mk(s, true)).chain(nontargets.iter().map(|&s| mk(s, false))).collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One ROC operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Operating points of every threshold that falls between distinct scores, from accept-all to reject-all.
pub fn roc_points(trials: &TrialScoreSet) -> Result<Vec<OperatingPoint>> {
    let n_tar = trials.entries.iter().filter(|t| t.target).count();
    let n_non = trials.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::SingleClass);
    }
    if trials.entries.iter().any(|t| !t.score.is_finite()) {
        return Err(Error::NonFinite("trial scores"));
    }
    let mut sorted: Vec<(f64, bool)> = trials.entries.iter().map(|t| (t.score, t.target)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (n_tar as f64, n_non as f64);
    let mut points = Vec::with_capacity(sorted.len() + 1);
    let (mut miss, mut fa) = (0usize, n_non);
    points.push(OperatingPoint { p_miss: 0.0, p_fa: 1.0 });
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                miss += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
        points.push(OperatingPoint { p_miss: miss as f64 / nt, p_fa: fa as f64 / nn });
    }
    Ok(points)
}

/// Equal error rate, linearly interpolated between the two ROC points where `P_miss − P_fa` changes sign.
pub fn compute_eer(trials: &TrialScoreSet) -> Result<f64> {
    let points = roc_points(trials)?;
    for pair in points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let da = a.p_miss - a.p_fa;
        let db = b.p_miss - b.p_fa;
        if da == 0.0 {
            return Ok(a.p_miss);
        }
        if da < 0.0 && db >= 0.0 {
            let lambda = -da / (db - da);
            return Ok(a.p_miss + lambda * (b.p_miss - a.p_miss));
        }
    }
    Err(Error::InternalConsistency("ROC never crosses the diagonal".into()))
}

/// Minimum normalized detection cost `P_miss + (1 − P)/P · P_fa` at one target prior.
pub fn compute_min_dcf(trials: &TrialScoreSet, p_target: f64) -> Result<f64> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::InvalidConfig("target prior must lie in (0, 1)".into()));
    }
    let beta = (1.0 - p_target) / p_target;
    let points = roc_points(trials)?;
    Ok(points.iter().map(|p| p.p_miss + beta * p.p_fa).fold(f64::INFINITY, f64::min))
}

/// Mean of the minimum normalized costs at the two primary target priors.
pub fn compute_min_cprimary(trials: &TrialScoreSet) -> Result<f64> {
    let mut total = 0.0;
    for p in CPRIMARY_TARGET_PRIORS {
        total += compute_min_dcf(trials, p)?;
    }
    Ok(total / CPRIMARY_TARGET_PRIORS.len() as f64)
}

/// Pearson correlation between `α_t` and `log(q_t / (1 − q_t))`.
pub fn weight_posterior_correlation(alpha: &FrameWeights, q: &VoicePosteriorSequence) -> Result<f64> {
    let log_odds: Vec<f64> = q
        .values()
        .iter()
        .map(|&p| {
            let p = p.clamp(LOG_ODDS_EPS, 1.0 - LOG_ODDS_EPS);
            ln(p / (1.0 - p))
        })
        .collect();
    pearson(alpha.values(), &log_odds)
}
