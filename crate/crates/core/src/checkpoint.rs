//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic    b"CADCNN1\0"                      8 bytes
//! version  u32                               currently 1
//! config   u64 byte count + UTF-8 key=value lines
//! params   per tensor, in layer order: u64 element count + count × f32
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{build_zeroed, CadModel, ModelConfig};

pub const MAGIC: &[u8; 8] = b"CADCNN1\0";
pub const VERSION: u32 = 1;

pub fn encode(model: &CadModel<f32>) -> Vec<u8> {
    let config = model.config().to_kv().render();
    let mut out = Vec::with_capacity(32 + config.len() + model.num_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    for tensor in model.network().params() {
        out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corrupt(format!("file truncated while reading {what} at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<CadModel<f32>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let mut cur = Cursor { bytes, pos: MAGIC.len() };
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let config_len = cur.u64("config length")? as usize;
    let text = std::str::from_utf8(cur.take(config_len, "config block")?)
        .map_err(|_| Error::Corrupt("config block is not UTF-8".into()))?;
    let config = ModelConfig::from_kv(&KeyValues::parse(text)?)?;
    let mut model: CadModel<f32> = build_zeroed(&config)?;
    for (i, tensor) in model.network_mut().params_mut().into_iter().enumerate() {
        let count = cur.u64("tensor length")? as usize;
        if count != tensor.len() {
            return Err(Error::Corrupt(format!(
                "tensor {i} holds {count} values, the configured model needs {}",
                tensor.len()
            )));
        }
        let raw = cur.take(count * 4, "tensor data")?;
        for (dst, chunk) in tensor.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &CadModel<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CadModel<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::nn::Tensor3;

    fn small() -> CadModel<f32> {
        build_model(&ModelConfig {
            input_length: 16,
            conv_filters: vec![3, 2],
            kernel: 4,
            conv_dropout: vec![0.2, 0.0],
            pool: 8,
            dense_units: 4,
            seed: 5,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.network().params(), m.network().params());
        let x = Tensor3::from_vec((0..32).map(|i| (i as f32 * 0.9).sin()).collect(), 2, 1, 16).unwrap();
        let (a, b) = (m.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&small());
        assert_eq!(&bytes[..8], b"CADCNN1\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut bytes = encode(&small());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bytes = encode(&small());
        bytes[8] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode(b"CAD"), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let bytes = encode(&small());
        for cut in [12, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode(&longer), Err(Error::Corrupt(_))));
    }
}
