//! Synthetic bird-activity clips: repeated linear chirps in pink-plus-white noise.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{normalize_dbfs, ManifestEntry};
use crate::dsp::Waveform;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_clips: usize,
    /// Event SNR in dB, drawn uniformly per positive clip.
    pub snr_db: (f64, f64),
    pub clip_s: f64,
    pub sample_rate_hz: u32,
    /// Probability of adding low-frequency tones, to either class.
    pub tone_prob: f64,
    pub dataset_ids: Vec<String>,
    pub target_dbfs: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clips: 200,
            snr_db: (10.0, 30.0),
            clip_s: 1.0,
            sample_rate_hz: 44100,
            tone_prob: 0.5,
            dataset_ids: vec!["synth-a".into(), "synth-b".into(), "synth-c".into()],
            target_dbfs: -2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_clips < 2 {
            return bad(format!("n_clips {} must be at least 2", self.n_clips));
        }
        let (lo, hi) = self.snr_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("SNR range ({lo}, {hi}) is not an interval"));
        }
        // chirps must fit, and 8 kHz must lie below Nyquist
        if !(self.clip_s >= 0.5) {
            return bad(format!("clip duration {} s is below 0.5 s", self.clip_s));
        }
        if self.sample_rate_hz < 16_001 {
            return bad(format!("sample rate {} Hz cannot carry 8 kHz chirps", self.sample_rate_hz));
        }
        if !(0.0..=1.0).contains(&self.tone_prob) {
            return bad(format!("tone probability {} outside [0, 1]", self.tone_prob));
        }
        if self.dataset_ids.is_empty() {
            return bad("at least one dataset id is required".into());
        }
        Ok(())
    }

    fn clip_len(&self) -> usize {
        (self.clip_s * f64::from(self.sample_rate_hz)).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SynthClip {
    pub entry: ManifestEntry,
    /// `None` for negatives.
    pub snr_db: Option<f64>,
    pub has_tones: bool,
    pub waveform: Waveform,
}

/// Clip `i` is positive iff `i` is even; its dataset id is assigned round-robin.
/// Each clip draws from its own ChaCha stream, so any clip can be regenerated alone.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<SynthClip>> {
    cfg.validate()?;
    (0..cfg.n_clips).map(|i| synth_clip(cfg, i)).collect()
}

pub fn synth_clip(cfg: &SynthConfig, index: usize) -> Result<SynthClip> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let sr = f64::from(cfg.sample_rate_hz);
    let n = cfg.clip_len();
    let positive = index % 2 == 0;

    let mut noise = pink_white_noise(&mut rng, n);
    let has_tones = rng.gen_bool(cfg.tone_prob);
    if has_tones {
        add_tones(&mut rng, &mut noise, sr);
    }

    let mut snr = None;
    let samples = if positive {
        let (chirps, active) = chirp_track(&mut rng, n, sr);
        let db = if cfg.snr_db.0 == cfg.snr_db.1 {
            cfg.snr_db.0
        } else {
            rng.gen_range(cfg.snr_db.0..cfg.snr_db.1)
        };
        snr = Some(db);
        // power of each component over the samples where a chirp sounds
        let (ps, pn) = active.iter().fold((0.0, 0.0), |(ps, pn), &t| {
            (ps + chirps[t] * chirps[t], pn + noise[t] * noise[t])
        });
        let gain = (pn / ps * 10f64.powf(db / 10.0)).sqrt();
        noise.iter().zip(&chirps).map(|(v, c)| v + gain * c).collect()
    } else {
        noise
    };
    let (waveform, _) = normalize_dbfs(&Waveform::new(samples, cfg.sample_rate_hz)?, cfg.target_dbfs);
    let item_id = format!("synth{index:05}");
    Ok(SynthClip {
        entry: ManifestEntry {
            path: PathBuf::from(format!("{item_id}.wav")),
            item_id,
            dataset_id: cfg.dataset_ids[index % cfg.dataset_ids.len()].clone(),
            has_bird: u8::from(positive),
        },
        snr_db: snr,
        has_tones,
        waveform,
    })
}

/// Pink noise from Paul Kellet's filter on white noise, plus a random share
/// of the white noise itself. Unit variance.
fn pink_white_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let white_share: f64 = rng.gen_range(0.1..0.5);
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let pink = (b.iter().sum::<f64>() + w * 0.5362) * 0.11;
            b[6] = w * 0.115926;
            let v: f64 = rng.sample(StandardNormal);
            pink + white_share * v
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    out.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    out
}

/// One to three hum tones between 50 and 400 Hz.
fn add_tones(rng: &mut ChaCha8Rng, x: &mut [f64], sr: f64) {
    for _ in 0..rng.gen_range(1..=3) {
        let f: f64 = rng.gen_range(50.0..400.0);
        let amp: f64 = rng.gen_range(0.5..2.0);
        let phase: f64 = rng.gen_range(0.0..2.0 * PI);
        for (t, v) in x.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * f * t as f64 / sr + phase).sin();
        }
    }
}

/// Repeated linear sweeps; returns the track and the indices where it is active.
fn chirp_track(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> (Vec<f64>, Vec<usize>) {
    let dur: f64 = rng.gen_range(0.1..0.5);
    let f0: f64 = rng.gen_range(2000.0..8000.0);
    let f1: f64 = rng.gen_range(2000.0..8000.0);
    let len = ((dur * sr) as usize).min(n);
    let gap = (rng.gen_range(0.05..0.3) * sr) as usize;
    let mut track = vec![0.0; n];
    let mut active = Vec::new();
    let mut start = rng.gen_range(0..=(n - len).min((0.2 * sr) as usize));
    while start + len <= n {
        // Hann-shaped onset and offset of 5 ms
        let ramp = ((0.005 * sr) as usize).max(1).min(len / 2);
        for i in 0..len {
            let t = i as f64 / sr;
            let phase = 2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / dur * t * t);
            let edge = i.min(len - 1 - i);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            track[start + i] = env * phase.sin();
            active.push(start + i);
        }
        start += len + gap;
    }
    (track, active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::power_spectrogram;

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_clips: n,
            clip_s: 0.5,
            seed,
            ..SynthConfig::default()
        }
    }

    /// Per-frame energy in the 2-8 kHz band, in dB.
    fn band_db(w: &Waveform) -> Vec<f64> {
        let ps = power_spectrogram(w, 0.01, 0.75).unwrap();
        let (lo, hi) = ((2000.0 / ps.bin_hz).ceil() as usize, (8000.0 / ps.bin_hz).floor() as usize);
        (0..ps.values.rows())
            .map(|t| 10.0 * ps.values.row(t)[lo..=hi].iter().sum::<f64>().log10())
            .collect()
    }

    fn median(v: &[f64]) -> f64 {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    }

    #[test]
    fn ten_clips_balanced_and_reproducible() {
        let a = synth_dataset(&small(10, 4)).unwrap();
        let b = synth_dataset(&small(10, 4)).unwrap();
        assert_eq!(a.iter().filter(|c| c.entry.has_bird == 1).count(), 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.waveform, y.waveform);
            assert_eq!(x.entry, y.entry);
        }
        assert_eq!(a[3].entry.item_id, "synth00003");
        assert_eq!(a[3].entry.dataset_id, "synth-a");
        assert!(a.iter().all(|c| (c.waveform.peak() - 10f64.powf(-0.1)).abs() < 1e-12));
        let c = synth_dataset(&small(10, 5)).unwrap();
        assert_ne!(a[0].waveform, c[0].waveform);
    }

    #[test]
    fn single_clip_regenerates() {
        let cfg = small(6, 2);
        let all = synth_dataset(&cfg).unwrap();
        assert_eq!(synth_clip(&cfg, 4).unwrap().waveform, all[4].waveform);
    }

    #[test]
    fn chirps_stand_out_at_20_db() {
        let cfg = SynthConfig {
            snr_db: (20.0, 20.0),
            ..small(8, 7)
        };
        for clip in synth_dataset(&cfg).unwrap() {
            let db = band_db(&clip.waveform);
            let excess = db.iter().cloned().fold(f64::MIN, f64::max) - median(&db);
            if clip.entry.has_bird == 1 {
                assert_eq!(clip.snr_db, Some(20.0));
                // chirps cover up to half the clip, so compare against the quietest frames too
                let floor = db.iter().cloned().fold(f64::MAX, f64::min);
                assert!(db.iter().cloned().fold(f64::MIN, f64::max) - floor >= 10.0);
            } else {
                assert_eq!(clip.snr_db, None);
                assert!(excess < 3.0, "noise-only clip has a {excess} dB band peak");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(synth_dataset(&small(1, 0)).is_err());
        let cfg = SynthConfig {
            snr_db: (5.0, 1.0),
            ..small(4, 0)
        };
        assert!(synth_dataset(&cfg).is_err());
    }
}
