//! Binary weight files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DSPW" | version | spec length | spec text (UTF-8)
//! | record count | records… | checksum (8 bytes)
//! record = name length | name | rank | dims… | f32 data
//! ```
//!
//! The checksum is the first 8 bytes of SHA-256 over everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::spec::ModelSpec;
use super::state::{ModelState, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"DSPW";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 8;

fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

fn push_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn encode<T: Real>(state: &ModelState<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let text = state.spec().to_text();
    push_u32(&mut buf, text.len());
    buf.extend_from_slice(text.as_bytes());
    push_u32(&mut buf, state.params().len());
    for (name, t) in state.params().iter() {
        push_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        push_u32(&mut buf, t.rank());
        for &d in t.shape() {
            push_u32(&mut buf, d);
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("string is not UTF-8".into()))
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<ModelState<T>> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let text = r.string()?;
    let count = r.u32()?;
    let mut raw = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(Error::Truncated)?;
        raw.push((name, shape, r.take(n)?));
    }
    let body_end = r.pos;
    let stored = r.take(CHECKSUM_LEN)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if stored != checksum(&bytes[..body_end]) {
        return Err(Error::ChecksumMismatch);
    }
    let spec = ModelSpec::from_text(&text)?;
    let mut params = ParamSet::new();
    for (name, shape, data) in raw {
        let values = data
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        if params.insert(name.clone(), Tensor::new(shape, values)?).is_some() {
            return Err(Error::Format(format!("duplicate parameter {name:?}")));
        }
    }
    ModelState::from_params(spec, params)
}

pub fn save<T: Real>(state: &ModelState<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(state)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<ModelState<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::DeepSpaceConfig;
    use crate::rng::Rng;

    fn model() -> ModelState<f32> {
        let mut spec = DeepSpaceConfig::reduced(35, 32).build().unwrap();
        spec.input_mean = Some([0.4, 0.5, 0.6]);
        let mut m = ModelState::init(spec, &mut Rng::new(8)).unwrap();
        // nonzero biases so their bytes are exercised too
        for (_, t) in m.params_mut().iter_mut() {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += i as f32 * 1e-3;
            }
        }
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dsw");
        let m = model();
        save(&m, &path).unwrap();
        let back: ModelState<f32> = load(&path).unwrap();
        assert_eq!(back.spec(), m.spec());
        assert_eq!(back.num_classes(), 35);
        for ((na, a), (nb, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(encode(&back), encode(&m));
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode::<f32>(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode::<f32>(&bad), Err(Error::VersionMismatch { found: 2, .. })));
        assert!(matches!(decode::<f32>(&bytes[..bytes.len() - 3]), Err(Error::Truncated)));
        assert!(matches!(decode::<f32>(&bytes[..bytes.len() / 2]), Err(Error::Truncated)));
        let mut bad = bytes.clone();
        let i = bytes.len() - 20;
        bad[i] ^= 0x01;
        assert!(matches!(decode::<f32>(&bad), Err(Error::ChecksumMismatch)));
    }

    #[test]
    fn every_payload_byte_is_covered() {
        let bytes = encode(&model());
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let i = 8 + rng.below(bytes.len() - 8 - CHECKSUM_LEN);
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(decode::<f32>(&bad).is_err(), "flip at {i} went unnoticed");
        }
    }
}
