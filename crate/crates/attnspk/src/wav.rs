use std::path::Path;

use attnspk_core::features::Waveform;

use crate::error::{Error, Result};

/// Reads a 16-bit PCM mono WAV file, scaling samples to `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bad = |msg: String| Error::Parse { path: path.to_path_buf(), line: 0, msg };
    let mut reader = hound::WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(bad(format!(
            "expected 16-bit PCM mono, found {} channel(s) of {}-bit {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    Ok(Waveform::new(samples, spec.sample_rate)?)
}
