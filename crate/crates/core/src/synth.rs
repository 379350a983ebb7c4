//! Seeded synthetic speaker corpus with labelled non-speech frames.
//!
//! Column 0 of every frame plays the role of log-energy. The remaining
//! columns of a speech frame are drawn from the speaker's own Gaussian
//! mixture and shifted by a per-utterance channel offset. Non-speech frames
//! come in contiguous runs, have lower energy and are drawn from one of the
//! corpus's noise sources; each utterance uses a single source, and the share
//! of non-speech varies from utterance to utterance.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::AcousticFrameSequence;
use crate::linalg::Matrix;

pub const FRAME_PERIOD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct SynthCorpusConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub frames_per_utt: usize,
    pub feature_dim: usize,
    pub speaker_spread: f64,
    pub channel_spread: f64,
    /// Corpus-wide share of non-speech frames; exact up to one frame.
    pub noise_frame_fraction: f64,
    /// Relative spread of the per-utterance share around `noise_frame_fraction`:
    /// each utterance's share is scaled by a factor drawn from `1 ± spread`.
    pub noise_fraction_spread: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
    /// Speakers `0..n_train_speakers` form the training partition.
    pub n_train_speakers: usize,
    /// Leading utterances of each evaluation speaker used for enrollment.
    pub enroll_per_speaker: usize,
    pub components: usize,
    /// Spread of a speaker's mixture components around the speaker mean.
    pub component_spread: f64,
    /// Standard deviation of a frame around its component mean.
    pub frame_spread: f64,
    pub voice_energy: f64,
    pub noise_energy: f64,
    pub energy_spread: f64,
    /// Background sources shared by the whole corpus; each utterance draws one.
    pub noise_types: usize,
    /// Spread of a noise source's mean; its mixture components use `component_spread`.
    pub noise_spread: f64,
    pub mean_noise_run: usize,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 50,
            utts_per_speaker: 12,
            frames_per_utt: 200,
            feature_dim: 12,
            speaker_spread: 1.0,
            channel_spread: 0.5,
            noise_frame_fraction: 0.3,
            noise_fraction_spread: 1.0,
            seed: 0,
            n_train_speakers: 40,
            enroll_per_speaker: 2,
            components: 4,
            component_spread: 1.0,
            frame_spread: 0.5,
            voice_energy: 1.0,
            noise_energy: 0.0,
            energy_spread: 0.5,
            noise_types: 8,
            noise_spread: 1.0,
            mean_noise_run: 15,
        }
    }
}

impl SynthCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.feature_dim < 2 {
            return bad("synthetic frames need an energy column and at least one more");
        }
        if self.n_speakers < 2 || self.utts_per_speaker == 0 || self.frames_per_utt == 0 || self.components == 0 {
            return bad("speaker, utterance, frame and component counts must be positive");
        }
        if self.n_train_speakers > self.n_speakers {
            return bad("more training speakers than speakers");
        }
        if self.n_train_speakers < self.n_speakers
            && (self.enroll_per_speaker == 0 || self.enroll_per_speaker >= self.utts_per_speaker)
        {
            return bad("evaluation speakers need enrollment and test utterances");
        }
        let spreads = [
            self.speaker_spread,
            self.channel_spread,
            self.component_spread,
            self.frame_spread,
            self.energy_spread,
            self.noise_spread,
        ];
        if spreads.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return bad("spreads must be positive");
        }
        if !(0.0..1.0).contains(&self.noise_frame_fraction) {
            return bad("noise frame fraction must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.noise_fraction_spread) {
            return bad("noise fraction spread must lie in [0, 1]");
        }
        if self.noise_frame_fraction > 0.0 && (self.noise_types == 0 || self.mean_noise_run == 0) {
            return bad("noise frames need at least one noise type and a positive run length");
        }
        if !self.voice_energy.is_finite() || !self.noise_energy.is_finite() {
            return bad("energies must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Enroll,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: usize,
    pub frames: AcousticFrameSequence,
    /// Ground truth: `true` for speech frames.
    pub voice: Vec<bool>,
    pub noise_type: Option<usize>,
    pub partition: Partition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub utterances: Vec<SynthUtterance>,
    pub n_speakers: usize,
    pub n_train_speakers: usize,
}

impl SynthCorpus {
    pub fn partition(&self, p: Partition) -> impl Iterator<Item = (usize, &SynthUtterance)> + '_ {
        self.utterances.iter().enumerate().filter(move |(_, u)| u.partition == p)
    }

    /// Every (enroll, test) pair of utterance indices with its target flag.
    pub fn trials(&self) -> Vec<(usize, usize, bool)> {
        let enroll: Vec<(usize, &SynthUtterance)> = self.partition(Partition::Enroll).collect();
        let mut out = Vec::new();
        for (e, eu) in &enroll {
            for (t, tu) in self.partition(Partition::Test) {
                out.push((*e, t, eu.speaker == tu.speaker));
            }
        }
        out
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            spread * z
        })
        .collect()
}

/// Splits `total` into `parts` positive integers (`total ≥ parts`).
fn positive_composition(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = Vec::with_capacity(parts + 1);
    cuts.push(0);
    let mut pool: Vec<usize> = (1..total).collect();
    for i in 0..parts - 1 {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
        cuts.push(pool[i]);
    }
    cuts.push(total);
    cuts.sort_unstable();
    cuts.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Per-utterance non-speech counts summing to `floor(fraction · utts · len)`,
/// each at most `len - 1`, with shares proportional to weights in `1 ± spread`.
fn noise_budget(rng: &mut ChaCha8Rng, utts: usize, len: usize, fraction: f64, spread: f64) -> Vec<usize> {
    let cap = len - 1;
    let total = (crate::math::floor(fraction * (utts * len) as f64) as usize).min(utts * cap);
    let w: Vec<f64> = (0..utts).map(|_| 1.0 + spread * rng.random_range(-1.0..=1.0)).collect();
    let mut counts = vec![0; utts];
    let mut capped = vec![false; utts];
    let mut left = total;
    loop {
        let free: f64 = (0..utts).filter(|&u| !capped[u]).map(|u| w[u]).sum();
        if !(free > 0.0) {
            break;
        }
        let over: Vec<usize> =
            (0..utts).filter(|&u| !capped[u] && left as f64 * w[u] / free >= cap as f64).collect();
        if over.is_empty() {
            let shares: Vec<(usize, f64)> =
                (0..utts).filter(|&u| !capped[u]).map(|u| (u, left as f64 * w[u] / free)).collect();
            for &(u, s) in &shares {
                counts[u] = crate::math::floor(s) as usize;
            }
            let mut rest = left - shares.iter().map(|&(u, _)| counts[u]).sum::<usize>();
            let mut by_remainder = shares;
            by_remainder.sort_by(|a, b| (b.1 - crate::math::floor(b.1)).total_cmp(&(a.1 - crate::math::floor(a.1))));
            for &(u, _) in &by_remainder {
                if rest == 0 {
                    break;
                }
                counts[u] += 1;
                rest -= 1;
            }
            break;
        }
        for u in over {
            counts[u] = cap;
            capped[u] = true;
            left -= cap;
        }
    }
    counts
}

/// Non-speech layout: exactly `noise` flagged frames in contiguous runs.
fn noise_layout(rng: &mut ChaCha8Rng, len: usize, noise: usize, mean_run: usize) -> Vec<bool> {
    let mut voice = vec![true; len];
    if noise == 0 {
        return voice;
    }
    let speech = len - noise;
    let runs = noise.div_ceil(mean_run).min(speech + 1).max(1);
    let run_lens = positive_composition(rng, noise, runs);
    // `runs + 1` gaps, the inner ones at least one frame long.
    let inner = runs - 1;
    let spare = speech - inner;
    let mut gaps = positive_composition(rng, spare + runs + 1, runs + 1);
    gaps.iter_mut().for_each(|g| *g -= 1);
    for g in gaps.iter_mut().take(runs).skip(1) {
        *g += 1;
    }
    let mut t = 0;
    for (r, &run) in run_lens.iter().enumerate() {
        t += gaps[r];
        voice[t..t + run].iter_mut().for_each(|v| *v = false);
        t += run;
    }
    voice
}

pub fn generate_corpus(cfg: &SynthCorpusConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let d = cfg.feature_dim;
    let body = d - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mixture = |spread: f64| -> Vec<Vec<f64>> {
        let mean = gaussian_vec(&mut rng, body, spread);
        (0..cfg.components)
            .map(|_| {
                let off = gaussian_vec(&mut rng, body, cfg.component_spread);
                mean.iter().zip(off).map(|(m, o)| m + o).collect()
            })
            .collect()
    };
    let noise_sources: Vec<Vec<Vec<f64>>> = (0..cfg.noise_types).map(|_| mixture(cfg.noise_spread)).collect();
    let speakers: Vec<Vec<Vec<f64>>> = (0..cfg.n_speakers).map(|_| mixture(cfg.speaker_spread)).collect();

    let len = cfg.frames_per_utt;
    let budget = noise_budget(
        &mut rng,
        cfg.n_speakers * cfg.utts_per_speaker,
        len,
        cfg.noise_frame_fraction,
        cfg.noise_fraction_spread,
    );
    let mut utterances = Vec::with_capacity(cfg.n_speakers * cfg.utts_per_speaker);
    for (s, comps) in speakers.iter().enumerate() {
        for u in 0..cfg.utts_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let idx = s * cfg.utts_per_speaker + u;
            let n_noise = budget[idx];
            rng.set_stream(1 + idx as u64);
            let channel = gaussian_vec(&mut rng, body, cfg.channel_spread);
            let voice = noise_layout(&mut rng, len, n_noise, cfg.mean_noise_run);
            let noise_type = (n_noise > 0).then(|| rng.random_range(0..cfg.noise_types));
            let mut frames = Matrix::zeros(len, d);
            for (t, &is_voice) in voice.iter().enumerate() {
                let row = frames.row_mut(t);
                let e: f64 = StandardNormal.sample(&mut rng);
                let k = rng.random_range(0..cfg.components);
                let (level, center) = if is_voice {
                    (cfg.voice_energy, &comps[k])
                } else {
                    (cfg.noise_energy, &noise_sources[noise_type.expect("noise frames have a type")][k])
                };
                row[0] = level + cfg.energy_spread * e;
                for j in 0..body {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    row[j + 1] = center[j] + cfg.frame_spread * z + if is_voice { channel[j] } else { 0.0 };
                }
            }
            let partition = if s < cfg.n_train_speakers {
                Partition::Train
            } else if u < cfg.enroll_per_speaker {
                Partition::Enroll
            } else {
                Partition::Test
            };
            utterances.push(SynthUtterance {
                id: format!("spk{s:03}-utt{u:03}"),
                speaker: s,
                frames: AcousticFrameSequence::new(frames, FRAME_PERIOD)?,
                voice,
                noise_type,
                partition,
            });
        }
    }
    Ok(SynthCorpus { utterances, n_speakers: cfg.n_speakers, n_train_speakers: cfg.n_train_speakers })
}
