//! Front end: MFCC extraction, delta appending, sliding mean normalization,
//! energy VAD and a logistic soft VAD.
//!
//! Column 0 of every MFCC frame holds the frame log-energy; the VADs read
//! the energy from a configurable column so pre-extracted features with a
//! different layout can be used as well.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math::{cos, exp, ln, logistic, round, sqrt};

/// Floor applied to frame energies and filterbank outputs before taking logs.
pub const LOG_FLOOR: f64 = f64::EPSILON;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// One row per frame, all rows of the same dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticFrameSequence {
    frames: Matrix,
    frame_period: f64,
}

impl AcousticFrameSequence {
    pub fn new(frames: Matrix, frame_period: f64) -> Result<Self> {
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::EmptyInput);
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("acoustic frames"));
        }
        if !(frame_period > 0.0) {
            return Err(Error::InvalidConfig("frame period must be positive".into()));
        }
        Ok(Self { frames, frame_period })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], frame_period: f64) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, frame_period)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    #[inline]
    pub fn frame_period(&self) -> f64 {
        self.frame_period
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix {
        self.frames
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.frames.row_iter()
    }

    pub fn column(&self, c: usize) -> Result<Vec<f64>> {
        if c >= self.dim() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "column {c} out of range for dimension {}",
                self.dim()
            )));
        }
        Ok(self.iter().map(|f| f[c]).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VadMask {
    pub keep: Vec<bool>,
}

impl VadMask {
    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Keeps the flagged entries of a per-frame series.
    pub fn select<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.keep.len() {
            return Err(Error::LengthMismatch { expected: self.keep.len(), got: items.len() });
        }
        Ok(items.iter().zip(&self.keep).filter(|(_, &k)| k).map(|(x, _)| x.clone()).collect())
    }

    /// Keeps the flagged frames of a sequence.
    pub fn apply(&self, seq: &AcousticFrameSequence) -> Result<AcousticFrameSequence> {
        if seq.len() != self.keep.len() {
            return Err(Error::LengthMismatch { expected: self.keep.len(), got: seq.len() });
        }
        let rows: Vec<&[f64]> =
            seq.iter().zip(&self.keep).filter(|(_, &k)| k).map(|(r, _)| r).collect();
        if rows.is_empty() {
            return Err(Error::AllSilence);
        }
        AcousticFrameSequence::from_rows(&rows, seq.frame_period())
    }
}

/// Per-frame voice probabilities `q_t ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoicePosteriorSequence {
    q: Vec<f64>,
}

impl VoicePosteriorSequence {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("voice posteriors"));
        }
        if let Some(bad) = q.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(alloc::format!("voice posterior {bad} outside [0, 1]")));
        }
        Ok(Self { q })
    }

    pub fn from_mask(mask: &VadMask) -> Self {
        Self { q: mask.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct FrontEndConfig {
    pub num_ceps: usize,
    pub num_filters: usize,
    pub window_s: f64,
    pub step_s: f64,
    pub preemphasis: f64,
    pub low_freq: f64,
    /// Upper filterbank edge in Hz; `0` means the Nyquist frequency.
    pub high_freq: f64,
    /// Replace cepstral coefficient 0 with the frame log-energy.
    pub use_energy: bool,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            num_ceps: 20,
            num_filters: 23,
            window_s: 0.025,
            step_s: 0.010,
            preemphasis: 0.97,
            low_freq: 20.0,
            high_freq: 0.0,
            use_energy: true,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    1127.0 * ln(1.0 + f / 700.0)
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (exp(m / 1127.0) - 1.0)
}

/// Triangular filters evenly spaced on the mel scale.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    fft_size: usize,
    sample_rate: f64,
    /// Per filter: first FFT bin and weights for consecutive bins.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &FrontEndConfig, sample_rate: u32, fft_size: usize) -> Result<Self> {
        let sr = f64::from(sample_rate);
        let nyquist = sr / 2.0;
        let high = if cfg.high_freq <= 0.0 { nyquist + cfg.high_freq } else { cfg.high_freq };
        if cfg.num_filters == 0 || !(cfg.low_freq >= 0.0 && cfg.low_freq < high && high <= nyquist) {
            return Err(Error::InvalidConfig("bad mel filterbank range".into()));
        }
        let (mel_lo, mel_hi) = (hz_to_mel(cfg.low_freq), hz_to_mel(high));
        let delta = (mel_hi - mel_lo) / (cfg.num_filters + 1) as f64;
        let n_bins = fft_size / 2 + 1;
        let mut filters = Vec::with_capacity(cfg.num_filters);
        let mut centers_hz = Vec::with_capacity(cfg.num_filters);
        for j in 0..cfg.num_filters {
            let left = mel_lo + j as f64 * delta;
            let center = left + delta;
            let right = center + delta;
            centers_hz.push(mel_to_hz(center));
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let m = hz_to_mel(k as f64 * sr / fft_size as f64);
                let w = if m > left && m < center {
                    (m - left) / (center - left)
                } else if m >= center && m < right {
                    (right - m) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            let Some(first) = first else {
                return Err(Error::InvalidConfig(alloc::format!(
                    "mel filter {j} covers no FFT bin; use fewer filters or a longer window"
                )));
            };
            filters.push((first, weights));
        }
        Ok(Self { fft_size, sample_rate: sr, filters, centers_hz })
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn center_hz(&self, j: usize) -> f64 {
        self.centers_hz[j]
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.fft_size as f64
    }

    /// Weight of FFT bin `k` in filter `j`.
    pub fn weight(&self, j: usize, k: usize) -> f64 {
        let (first, w) = &self.filters[j];
        if k < *first {
            0.0
        } else {
            w.get(k - first).copied().unwrap_or(0.0)
        }
    }

    /// Filter energies from a power spectrum of `fft_size / 2 + 1` bins.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(first, w)| w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// In-place iterative radix-2 FFT. `re.len()` must be a power of two.
fn fft(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (wr, wi) = (cos(ang * k as f64), crate::math::sin(ang * k as f64));
                let (a, b) = (start + k, start + k + half);
                let xr = re[b] * wr - im[b] * wi;
                let xi = re[b] * wi + im[b] * wr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
            }
        }
        len <<= 1;
    }
}

/// Frame-level MFCC analysis with a fixed configuration and sample rate.
#[derive(Clone, Debug)]
pub struct FrontEnd {
    cfg: FrontEndConfig,
    sample_rate: u32,
    window_len: usize,
    step_len: usize,
    window: Vec<f64>,
    filterbank: MelFilterbank,
}

impl FrontEnd {
    pub fn new(cfg: &FrontEndConfig, sample_rate: u32) -> Result<Self> {
        let sr = f64::from(sample_rate);
        let window_len = round(cfg.window_s * sr) as usize;
        let step_len = round(cfg.step_s * sr) as usize;
        if window_len < 2 || step_len == 0 {
            return Err(Error::InvalidConfig("window and step must cover at least one sample".into()));
        }
        if cfg.num_ceps == 0 || cfg.num_ceps > cfg.num_filters {
            return Err(Error::InvalidConfig("need 0 < num_ceps <= num_filters".into()));
        }
        let fft_size = window_len.next_power_of_two();
        let window = (0..window_len)
            .map(|i| 0.54 - 0.46 * cos(2.0 * PI * i as f64 / (window_len - 1) as f64))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            window_len,
            step_len,
            window,
            filterbank: MelFilterbank::new(cfg, sample_rate, fft_size)?,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn step_len(&self) -> usize {
        self.step_len
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        frame_count(num_samples, self.window_len, self.step_len)
    }

    /// Power spectrum of one frame after pre-emphasis and Hamming windowing.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let n = self.filterbank.fft_size();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        let p = self.cfg.preemphasis;
        for i in 0..self.window_len {
            let prev = if i == 0 { frame[0] } else { frame[i - 1] };
            re[i] = (frame[i] - p * prev) * self.window[i];
        }
        fft(&mut re, &mut im);
        (0..=n / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect()
    }

    /// Mel filterbank energies (linear, before the log) of one frame.
    pub fn filterbank_energies(&self, frame: &[f64]) -> Vec<f64> {
        self.filterbank.apply(&self.power_spectrum(frame))
    }

    fn frame_mfcc(&self, frame: &[f64], out: &mut [f64]) {
        let log_mel: Vec<f64> =
            self.filterbank_energies(frame).into_iter().map(|e| ln(e.max(LOG_FLOOR))).collect();
        let m = log_mel.len() as f64;
        for (i, o) in out.iter_mut().enumerate() {
            let scale = if i == 0 { sqrt(1.0 / m) } else { sqrt(2.0 / m) };
            *o = scale
                * log_mel
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| v * cos(PI * i as f64 * (j as f64 + 0.5) / m))
                    .sum::<f64>();
        }
        if self.cfg.use_energy {
            let energy: f64 = frame.iter().map(|x| x * x).sum();
            out[0] = ln(energy.max(LOG_FLOOR));
        }
    }

    pub fn compute(&self, wave: &Waveform) -> Result<AcousticFrameSequence> {
        if wave.sample_rate != self.sample_rate {
            return Err(Error::InvalidConfig(alloc::format!(
                "front end built for {} Hz, got {} Hz",
                self.sample_rate,
                wave.sample_rate
            )));
        }
        let l = self.num_frames(wave.samples.len());
        if l == 0 {
            return Err(Error::EmptyInput);
        }
        let mut frames = Matrix::zeros(l, self.cfg.num_ceps);
        for t in 0..l {
            let start = t * self.step_len;
            self.frame_mfcc(&wave.samples[start..start + self.window_len], frames.row_mut(t));
        }
        AcousticFrameSequence::new(frames, self.step_len as f64 / f64::from(self.sample_rate))
    }
}

/// Number of full analysis windows: `floor((n - window) / step) + 1`, or 0.
pub fn frame_count(num_samples: usize, window: usize, step: usize) -> usize {
    if num_samples < window || step == 0 {
        0
    } else {
        (num_samples - window) / step + 1
    }
}

pub fn compute_mfcc(wave: &Waveform, cfg: &FrontEndConfig) -> Result<AcousticFrameSequence> {
    FrontEnd::new(cfg, wave.sample_rate)?.compute(wave)
}

/// Appends delta and delta-delta blocks (regression over ±2 frames, edges replicated).
pub fn append_deltas(seq: &AcousticFrameSequence) -> Result<AcousticFrameSequence> {
    let d = seq.dim();
    let delta = regression_deltas(seq.frames());
    let delta2 = regression_deltas(&delta);
    let mut out = Matrix::zeros(seq.len(), 3 * d);
    for t in 0..seq.len() {
        let row = out.row_mut(t);
        row[..d].copy_from_slice(seq.frame(t));
        row[d..2 * d].copy_from_slice(delta.row(t));
        row[2 * d..].copy_from_slice(delta2.row(t));
    }
    AcousticFrameSequence::new(out, seq.frame_period())
}

fn regression_deltas(x: &Matrix) -> Matrix {
    const N: usize = 2;
    let denom = 2.0 * (1..=N).map(|n| (n * n) as f64).sum::<f64>();
    let l = x.rows();
    let mut out = Matrix::zeros(l, x.cols());
    for t in 0..l {
        for n in 1..=N {
            let fwd = x.row((t + n).min(l - 1));
            let back = x.row(t.saturating_sub(n));
            let w = n as f64 / denom;
            for ((o, a), b) in out.row_mut(t).iter_mut().zip(fwd).zip(back) {
                *o += w * (a - b);
            }
        }
    }
    out
}

/// Subtracts from every frame the mean over a sliding window of `window_s` seconds.
///
/// The window is centered on the frame and shifted inward at the edges so it
/// always spans `min(window, L)` frames; an utterance no longer than the window
/// is normalized by its global mean.
pub fn sliding_cmn(seq: &AcousticFrameSequence, window_s: f64) -> Result<AcousticFrameSequence> {
    if !(window_s >= seq.frame_period() * (1.0 - 1e-9)) {
        return Err(Error::InvalidConfig("CMN window shorter than one frame".into()));
    }
    let l = seq.len();
    let d = seq.dim();
    let w = (round(window_s / seq.frame_period()) as usize).clamp(1, l);
    let mut prefix = Matrix::zeros(l + 1, d);
    for t in 0..l {
        let (head, tail) = prefix.as_mut_slice().split_at_mut((t + 1) * d);
        let prev = &head[t * d..];
        for ((p, &a), &x) in tail[..d].iter_mut().zip(prev).zip(seq.frame(t)) {
            *p = a + x;
        }
    }
    let mut out = Matrix::zeros(l, d);
    for t in 0..l {
        let start = t.saturating_sub(w / 2).min(l - w);
        let end = start + w;
        let inv = 1.0 / w as f64;
        for (j, o) in out.row_mut(t).iter_mut().enumerate() {
            *o = seq.frame(t)[j] - (prefix[(end, j)] - prefix[(start, j)]) * inv;
        }
    }
    AcousticFrameSequence::new(out, seq.frame_period())
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct VadConfig {
    pub energy_column: usize,
    /// Threshold offset relative to the mean log-energy of the sequence.
    pub offset: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self { energy_column: 0, offset: -1.0 }
    }
}

pub fn energy_vad(seq: &AcousticFrameSequence, cfg: &VadConfig) -> Result<VadMask> {
    let energy = seq.column(cfg.energy_column)?;
    let threshold = mean(&energy) + cfg.offset;
    let keep: Vec<bool> = energy.iter().map(|&e| e > threshold).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::AllSilence);
    }
    Ok(VadMask { keep })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct SoftVadConfig {
    pub energy_column: usize,
    /// Logistic slope per unit of log-energy.
    pub slope: f64,
    /// Midpoint relative to the mean log-energy of the sequence.
    pub offset: f64,
    /// Moving-average radius in frames.
    pub smooth_radius: usize,
}

impl Default for SoftVadConfig {
    fn default() -> Self {
        Self { energy_column: 0, slope: 4.0, offset: 0.0, smooth_radius: 2 }
    }
}

/// `q_t = logistic(slope · (e_t − θ))`, then a moving average over ±`smooth_radius` frames.
pub fn soft_vad_posteriors(
    seq: &AcousticFrameSequence,
    cfg: &SoftVadConfig,
) -> Result<VoicePosteriorSequence> {
    let energy = seq.column(cfg.energy_column)?;
    let theta = mean(&energy) + cfg.offset;
    let raw: Vec<f64> = energy.iter().map(|&e| logistic(cfg.slope * (e - theta))).collect();
    let l = raw.len();
    let r = cfg.smooth_radius;
    let q = (0..l)
        .map(|t| {
            let lo = t.saturating_sub(r);
            let hi = (t + r).min(l - 1);
            raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    VoicePosteriorSequence::new(q)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn scalar_seq(v: &[f64]) -> AcousticFrameSequence {
        let rows: Vec<[f64; 1]> = v.iter().map(|&x| [x]).collect();
        AcousticFrameSequence::from_rows(&rows, 0.01).unwrap()
    }

    #[test]
    fn one_second_at_8k_gives_98_frames() {
        let wave = Waveform::new(vec![0.0; 8000], 8000).unwrap();
        let seq = compute_mfcc(&wave, &FrontEndConfig::default()).unwrap();
        assert_eq!(seq.len(), 98);
        assert_eq!(seq.dim(), 20);
        assert!((seq.frame_period() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn frame_count_arithmetic() {
        for n in 0..500 {
            for window in 1..20 {
                for step in 1..12 {
                    let expected = if n < window { 0 } else { (n - window) / step + 1 };
                    assert_eq!(frame_count(n, window, step), expected);
                    // the last frame ends inside the signal and one more would not fit
                    if expected > 0 {
                        assert!((expected - 1) * step + window <= n);
                        assert!(expected * step + window > n);
                    }
                }
            }
        }
    }

    #[test]
    fn short_signal_is_an_error() {
        let wave = Waveform::new(vec![0.1; 199], 8000).unwrap();
        assert_eq!(compute_mfcc(&wave, &FrontEndConfig::default()).unwrap_err(), Error::EmptyInput);
    }

    #[test]
    fn silent_waveform_gives_floored_energy_frames() {
        let wave = Waveform::new(vec![0.0; 4000], 8000).unwrap();
        let seq = compute_mfcc(&wave, &FrontEndConfig::default()).unwrap();
        let first = seq.frame(0).to_vec();
        assert!((first[0] - ln(LOG_FLOOR)).abs() < 1e-12);
        assert!(first[1..].iter().all(|c| c.abs() < 1e-9));
        assert!(seq.iter().all(|f| f == first.as_slice()));
    }

    #[test]
    fn mfcc_is_deterministic() {
        let samples: Vec<f64> = (0..3000).map(|i| cos(0.05 * i as f64) + 0.3 * cos(1.3 * i as f64)).collect();
        let wave = Waveform::new(samples, 8000).unwrap();
        let a = compute_mfcc(&wave, &FrontEndConfig::default()).unwrap();
        let b = compute_mfcc(&wave, &FrontEndConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_sequence_has_zero_deltas() {
        let seq = AcousticFrameSequence::from_rows(&[[1.0, -2.0]; 6], 0.01).unwrap();
        let out = append_deltas(&seq).unwrap();
        assert_eq!(out.dim(), 6);
        for f in out.iter() {
            assert_eq!(&f[..2], &[1.0, -2.0]);
            assert!(f[2..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ramp_delta_equals_slope_vector() {
        // x_t = t u, interior frame: (1·(2u) + 2·(4u)) / 10 = u
        let u = [0.5, -1.5, 2.0];
        let rows: Vec<Vec<f64>> = (0..7).map(|t| u.iter().map(|x| x * t as f64).collect()).collect();
        let out = append_deltas(&AcousticFrameSequence::from_rows(&rows, 0.01).unwrap()).unwrap();
        for t in 2..5 {
            for j in 0..3 {
                assert!((out.frame(t)[3 + j] - u[j]).abs() < 1e-12);
            }
        }
        // delta of a constant interior delta is zero at the centre frame
        for j in 0..3 {
            assert!(out.frame(3)[6 + j].abs() < 1e-12);
        }
    }

    #[test]
    fn twenty_dims_become_sixty() {
        let seq = AcousticFrameSequence::new(Matrix::zeros(5, 20), 0.01).unwrap();
        assert_eq!(append_deltas(&seq).unwrap().dim(), 60);
    }

    #[test]
    fn cmn_of_constant_is_zero() {
        let seq = scalar_seq(&[3.0; 40]);
        let out = sliding_cmn(&seq, 0.1).unwrap();
        assert!(out.iter().all(|f| f[0].abs() < 1e-12));
    }

    #[test]
    fn cmn_short_utterance_is_global_mean_subtraction() {
        let v = [1.0, 4.0, -2.0, 0.5, 7.0];
        let out = sliding_cmn(&scalar_seq(&v), 3.0).unwrap();
        let m = v.iter().sum::<f64>() / 5.0;
        for (o, x) in out.iter().zip(v) {
            assert!((o[0] - (x - m)).abs() < 1e-12);
        }
    }

    #[test]
    fn cmn_three_frame_window_on_ramp() {
        // windows: [0,3) [0,3) [1,4) [2,5) [2,5)
        let out = sliding_cmn(&scalar_seq(&[0.0, 1.0, 2.0, 3.0, 4.0]), 0.03).unwrap();
        let got: Vec<f64> = out.iter().map(|f| f[0]).collect();
        let want = [-1.0, 0.0, 0.0, 0.0, 1.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn cmn_rejects_sub_frame_window() {
        assert!(sliding_cmn(&scalar_seq(&[1.0, 2.0]), 0.001).is_err());
    }

    #[test]
    fn vad_uniform_energy_keeps_all() {
        let mask = energy_vad(&scalar_seq(&[2.0; 10]), &VadConfig { energy_column: 0, offset: -0.5 }).unwrap();
        assert!(mask.keep.iter().all(|&k| k));
    }

    #[test]
    fn vad_two_level_energy() {
        let v: Vec<f64> = (0..20).map(|t| if t % 3 == 0 { -4.0 } else { 1.0 }).collect();
        let mask = energy_vad(&scalar_seq(&v), &VadConfig { energy_column: 0, offset: 0.0 }).unwrap();
        let want: Vec<bool> = v.iter().map(|&e| e > 0.0).collect();
        assert_eq!(mask.keep, want);
    }

    #[test]
    fn vad_all_silent_is_an_error() {
        let err = energy_vad(&scalar_seq(&[1.0; 5]), &VadConfig { energy_column: 0, offset: 0.5 });
        assert_eq!(err.unwrap_err(), Error::AllSilence);
    }

    #[test]
    fn vad_bad_column() {
        assert!(energy_vad(&scalar_seq(&[1.0; 5]), &VadConfig { energy_column: 3, offset: 0.0 }).is_err());
    }

    #[test]
    fn soft_vad_midpoint() {
        let q = soft_vad_posteriors(&scalar_seq(&[0.7; 9]), &SoftVadConfig::default()).unwrap();
        assert!(q.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn soft_vad_steep_limit_matches_hard_mask() {
        let v: Vec<f64> = (0..30).map(|t| if (t / 5) % 2 == 0 { 2.0 } else { -1.0 }).collect();
        let seq = scalar_seq(&v);
        let hard = energy_vad(&seq, &VadConfig { energy_column: 0, offset: 0.0 }).unwrap();
        let cfg = SoftVadConfig { slope: 1e4, smooth_radius: 0, ..Default::default() };
        let q = soft_vad_posteriors(&seq, &cfg).unwrap();
        for (qt, k) in q.values().iter().zip(&hard.keep) {
            assert!((qt - if *k { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        // with smoothing, frames at least `radius` away from a level change also converge
        let q = soft_vad_posteriors(&seq, &SoftVadConfig { slope: 1e4, ..Default::default() }).unwrap();
        for t in 0..30usize {
            let stable = (t.saturating_sub(2)..=(t + 2).min(29)).all(|s| hard.keep[s] == hard.keep[t]);
            if stable {
                assert!((q.values()[t] - if hard.keep[t] { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_validation() {
        assert!(VoicePosteriorSequence::new(vec![0.0, 1.0, 0.5]).is_ok());
        assert!(VoicePosteriorSequence::new(vec![1.2]).is_err());
        assert!(VoicePosteriorSequence::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn mask_select_and_apply() {
        let mask = VadMask { keep: vec![true, false, true] };
        assert_eq!(mask.select(&[1, 2, 3]).unwrap(), vec![1, 3]);
        let out = mask.apply(&scalar_seq(&[5.0, 6.0, 7.0])).unwrap();
        assert_eq!(out.column(0).unwrap(), vec![5.0, 7.0]);
        assert!(mask.select(&[1]).is_err());
    }
}
