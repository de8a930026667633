//! Feature files.
//!
//! ```text
//! 0   "AVFE"
//! 4   u32 version (1)
//! 8   u32 frontend kind code
//! 12  u32 channels
//! 16  u32 frames
//! 20  u32 bands
//! 24  f64 hop in seconds
//! 32  f32 payload, channel-major
//! ```
//!
//! All fields little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::frontends::{FeatureMap, FrontendKind};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AVFE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub kind: FrontendKind,
    pub channels: usize,
    pub n_frames: usize,
    pub n_bands: usize,
    pub hop_s: f64,
    pub payload: Vec<f32>,
}

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit a feature file")))
}

impl FeatureFile {
    pub fn from_map(kind: FrontendKind, map: &FeatureMap) -> Self {
        Self {
            kind,
            channels: map.channels,
            n_frames: map.n_frames,
            n_bands: map.n_bands,
            hop_s: map.hop_s,
            payload: map.values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_map(&self) -> Result<FeatureMap> {
        FeatureMap::new(
            self.channels,
            self.n_frames,
            self.n_bands,
            self.payload.iter().map(|&v| f64::from(v)).collect(),
            self.hop_s,
        )
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        if self.payload.len() != self.channels * self.n_frames * self.n_bands {
            return Err(Error::Shape(format!(
                "{} values for a {}x{}x{} feature file",
                self.payload.len(),
                self.channels,
                self.n_frames,
                self.n_bands
            )));
        }
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * self.payload.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.kind.code().to_le_bytes());
        buf.extend_from_slice(&dim(self.channels, "channel count")?.to_le_bytes());
        buf.extend_from_slice(&dim(self.n_frames, "frame count")?.to_le_bytes());
        buf.extend_from_slice(&dim(self.n_bands, "band count")?.to_le_bytes());
        buf.extend_from_slice(&self.hop_s.to_le_bytes());
        for v in &self.payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut h = [0u8; HEADER_LEN];
        r.read_exact(&mut h)
            .map_err(|_| Error::Format("feature file shorter than its header".into()))?;
        if &h[..4] != MAGIC {
            return Err(Error::Format("not a feature file (bad magic)".into()));
        }
        let word = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
        if word(4) != VERSION {
            return Err(Error::Format(format!("feature file version {} is not supported", word(4))));
        }
        let kind = FrontendKind::from_code(word(8))
            .ok_or_else(|| Error::Format(format!("unknown frontend code {}", word(8))))?;
        let (channels, n_frames, n_bands) = (word(12) as usize, word(16) as usize, word(20) as usize);
        let hop_s = f64::from_le_bytes(h[24..32].try_into().unwrap());
        let n = channels
            .checked_mul(n_frames)
            .and_then(|v| v.checked_mul(n_bands))
            .filter(|&n| n <= 1 << 31)
            .ok_or_else(|| Error::Format("feature file dimensions are implausible".into()))?;
        let mut bytes = Vec::with_capacity(4 * n);
        r.take(4 * n as u64 + 1).read_to_end(&mut bytes)?;
        if bytes.len() != 4 * n {
            return Err(Error::Format(format!(
                "feature payload has {} bytes, header implies {}",
                bytes.len(),
                4 * n
            )));
        }
        let payload = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            kind,
            channels,
            n_frames,
            n_bands,
            hop_s,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice()).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeatureFile {
        FeatureFile {
            kind: FrontendKind::Logmel,
            channels: 2,
            n_frames: 3,
            n_bands: 4,
            hop_s: 0.0025,
            payload: (0..24).map(|i| i as f32 * 0.5 - 3.0).collect(),
        }
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 24 * 4);
        assert_eq!(&buf[..4], b"AVFE");
        assert_eq!(buf[4..8], 1u32.to_le_bytes());
        assert_eq!(buf[8..12], FrontendKind::Logmel.code().to_le_bytes());
        assert_eq!(buf[12..16], 2u32.to_le_bytes());
        assert_eq!(buf[16..20], 3u32.to_le_bytes());
        assert_eq!(buf[20..24], 4u32.to_le_bytes());
        assert_eq!(buf[24..32], 0.0025f64.to_le_bytes());
        assert_eq!(buf[32..36], (-3.0f32).to_le_bytes());
    }

    #[test]
    fn rejects_damage() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert!(FeatureFile::read_from(&mut &buf[..40]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(FeatureFile::read_from(&mut extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(FeatureFile::read_from(&mut bad.as_slice()).is_err());
        let mut bad = buf;
        bad[8] = 99;
        assert!(FeatureFile::read_from(&mut bad.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(bits in prop::collection::vec(any::<u32>(), 6), hop in 1e-4f64..1.0) {
            let f = FeatureFile {
                kind: FrontendKind::Strf,
                channels: 1,
                n_frames: 2,
                n_bands: 3,
                hop_s: hop,
                payload: bits.iter().map(|&b| f32::from_bits(b)).collect(),
            };
            let mut buf = Vec::new();
            f.write_to(&mut buf).unwrap();
            let g = FeatureFile::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(g.hop_s.to_bits(), hop.to_bits());
            let same = f.payload.iter().zip(&g.payload).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
