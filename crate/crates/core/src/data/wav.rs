//! WAV decoding, fitting to a fixed clip length, and peak normalization.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use log::warn;

use crate::dsp::Waveform;
use crate::{Error, Result};

/// How decoded audio is brought to a common shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    /// Files at other rates are linearly resampled to this one.
    pub sample_rate_hz: u32,
    /// Zero-pad or truncate to this duration; `None` keeps the decoded length.
    pub clip_s: Option<f64>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            sample_rate_hz: 44100,
            clip_s: Some(10.0),
        }
    }
}

impl LoadOptions {
    pub fn clip_len(&self) -> Option<usize> {
        self.clip_s.map(|s| (s * f64::from(self.sample_rate_hz)).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(s) = self.clip_s {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("clip duration {s} must be positive")));
            }
        }
        Ok(())
    }
}

fn audio_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Decodes 16-bit PCM or 32-bit float WAV, averaging channels to mono.
/// Integer samples are scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path).map_err(|e| audio_err(path, e))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 || channels > 2 {
        return Err(audio_err(path, format!("{channels} channels; mono or stereo expected")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(audio_err(
                path,
                format!("unsupported encoding {fmt:?} {bits}-bit; PCM 16-bit or float 32-bit expected"),
            ))
        }
    }
    .map_err(|e| audio_err(path, e))?;
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, spec.sample_rate).map_err(|e| audio_err(path, e))
}

/// [`read_wav`], then resampling and length fitting per `opts`.
pub fn load_wav(path: &Path, opts: &LoadOptions) -> Result<Waveform> {
    let mut w = read_wav(path)?;
    if w.sample_rate_hz != opts.sample_rate_hz {
        warn!(
            "{}: resampling {} Hz to {} Hz",
            path.display(),
            w.sample_rate_hz,
            opts.sample_rate_hz
        );
        w = resample_linear(&w, opts.sample_rate_hz)?;
    }
    if let Some(n) = opts.clip_len() {
        w.samples.resize(n, 0.0);
    }
    Ok(w)
}

/// Writes mono 16-bit PCM, clipping to the representable range.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| audio_err(path, e))?;
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| audio_err(path, e))?;
    }
    writer.finalize().map_err(|e| audio_err(path, e))
}

/// Linear interpolation onto a new sample grid of the same duration.
pub fn resample_linear(w: &Waveform, sample_rate_hz: u32) -> Result<Waveform> {
    if sample_rate_hz == 0 {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    let ratio = f64::from(w.sample_rate_hz) / f64::from(sample_rate_hz);
    let n = (w.len() as f64 / ratio).round() as usize;
    let last = w.len().saturating_sub(1);
    let samples = (0..n)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = (pos.floor() as usize).min(last);
            let frac = pos - j as f64;
            let next = w.samples[(j + 1).min(last)];
            w.samples[j] * (1.0 - frac) + next * frac
        })
        .collect();
    Waveform::new(samples, sample_rate_hz)
}

/// Scales so the peak magnitude equals `10^(target_dbfs/20)`.
///
/// Silent input comes back unchanged with the flag set.
pub fn normalize_dbfs(w: &Waveform, target_dbfs: f64) -> (Waveform, bool) {
    let peak = w.peak();
    if peak == 0.0 {
        return (w.clone(), true);
    }
    let gain = 10f64.powf(target_dbfs / 20.0) / peak;
    let samples = w.samples.iter().map(|s| s * gain).collect();
    (
        Waveform {
            samples,
            sample_rate_hz: w.sample_rate_hz,
        },
        false,
    )
}
