//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "AVCK"  u32 version
//! u32 config length, config text (UTF-8)
//! u32 tensor count, tensors
//! u64 optimizer step, f64 learning rate
//! u32 moment count, first moments (as tensors), second moments (as tensors)
//! tensor: u32 name length, name (UTF-8), u32 rank, rank × u64 dims, f64 payload
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Adam, ParamTensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AVCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<ParamTensor>,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(w, self.config.as_bytes())?;
        write_u32(w, self.tensors.len())?;
        for t in &self.tensors {
            write_tensor(w, t)?;
        }
        let opt = &self.optimizer;
        w.write_all(&opt.step.to_le_bytes())?;
        w.write_all(&opt.learning_rate.to_le_bytes())?;
        write_u32(w, opt.m.len())?;
        for (moments, tag) in [(&opt.m, "m"), (&opt.v, "v")] {
            for (i, m) in moments.iter().enumerate() {
                let name = self.tensors.get(i).map_or_else(|| format!("{i}"), |t| t.name.clone());
                write_tensor(w, &ParamTensor::new(format!("{tag}.{name}"), vec![m.len()], m.clone()))?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let n = read_u32(r)?;
        let tensors = (0..n).map(|_| read_tensor(r)).collect::<Result<Vec<_>>>()?;
        let step = u64::from_le_bytes(read_array(r)?);
        let lr = f64::from_le_bytes(read_array(r)?);
        let nm = read_u32(r)?;
        let m = (0..nm).map(|_| read_tensor(r).map(|t| t.value)).collect::<Result<Vec<_>>>()?;
        let v = (0..nm).map(|_| read_tensor(r).map(|t| t.value)).collect::<Result<Vec<_>>>()?;
        let mut optimizer = Adam::new(lr)?;
        optimizer.step = step;
        optimizer.m = m;
        optimizer.v = v;
        Ok(Self {
            config,
            tensors,
            optimizer,
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
        Self::read_from(&mut bytes.as_slice())
    }
}

fn write_u32(w: &mut impl Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit in u32")))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    write_u32(w, b.len())?;
    w.write_all(b)?;
    Ok(())
}

fn write_tensor(w: &mut impl Write, t: &ParamTensor) -> Result<()> {
    write_bytes(w, t.name.as_bytes())?;
    write_u32(w, t.shape.len())?;
    for &d in &t.shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(8 * t.value.len());
    for v in &t.value {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

/// Guards allocations against corrupt length fields.
const MAX_ELEMS: u64 = 1 << 32;

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    let mut b = Vec::new();
    r.take(n as u64).read_to_end(&mut b)?;
    if b.len() != n {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    Ok(b)
}

fn read_tensor(r: &mut impl Read) -> Result<ParamTensor> {
    let name = String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
    let rank = read_u32(r)?;
    let mut shape = Vec::new();
    let mut count: u64 = 1;
    for _ in 0..rank {
        let d = u64::from_le_bytes(read_array(r)?);
        count = count
            .checked_mul(d)
            .filter(|&c| c <= MAX_ELEMS)
            .ok_or_else(|| Error::Format(format!("tensor '{name}' is implausibly large")))?;
        shape.push(d as usize);
    }
    let mut raw = Vec::new();
    r.take(8 * count).read_to_end(&mut raw)?;
    if raw.len() as u64 != 8 * count {
        return Err(Error::Format(format!("truncated payload for tensor '{name}'")));
    }
    let value = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(ParamTensor::new(name, shape, value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut optimizer = Adam::new(1e-4).unwrap();
        optimizer.step = 17;
        optimizer.m = vec![vec![0.1, 0.2], vec![-0.5]];
        optimizer.v = vec![vec![1e-3, 2e-3], vec![4e-2]];
        Checkpoint {
            config: "[train]\nlr = 0.001\n".into(),
            tensors: vec![
                ParamTensor::new("a", vec![1, 2], vec![1.5, -0.0]),
                ParamTensor::new("b", vec![1], vec![f64::MIN_POSITIVE]),
            ],
            optimizer,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensors[0].value[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"AVCK");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let cfg_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        assert_eq!(&buf[12..12 + cfg_len], b"[train]\nlr = 0.001\n");
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(&mut &buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut ver = buf;
        ver[4] = 9;
        assert!(Checkpoint::read_from(&mut ver.as_slice()).is_err());
    }
}
