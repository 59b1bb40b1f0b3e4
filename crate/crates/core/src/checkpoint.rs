//! Binary parameter container.
//!
//! Layout (little-endian): magic `TVCK`, format version (u32), metadata
//! length (u64) and JSON metadata, parameter count (u64), then per
//! parameter: name length (u32), UTF-8 name, rank (u32), extents (u64 each)
//! and f64 values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataforge::{write_atomic, Grouping};
use crate::error::{Error, Result};
use crate::model::TerraceNet;
use crate::nn::{ModelRng, Module};
use crate::omega::NetworkConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TVCK";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the model a checkpoint belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub network: NetworkConfig,
    pub grouping: Grouping,
    /// Native tile size the model was trained for.
    pub native_size: usize,
    /// Optimizer steps behind these weights.
    pub step: usize,
}

pub fn encode<T: Scalar>(model: &TerraceNet<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta).map_err(|e| Error::Format(e.to_string()))?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let params = model.parameters();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, t) in &params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| Error::Format("checkpoint length overflows".into()))
    }
}

/// Rebuilds the model described by the metadata and loads its weights.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(TerraceNet<T>, CheckpointMeta)> {
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n = r.len()?;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::Format(e.to_string()))?;
    let mut model = TerraceNet::new(&meta.network, &mut rand::SeedableRng::seed_from_u64(0))?;
    let expected = model.parameters();
    let count = r.len()?;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, model needs {}",
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for (want, like) in &expected {
        let nl = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nl)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if name != want {
            return Err(Error::Format(format!(
                "tensor '{name}' where '{want}' was expected"
            )));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        if shape != like.shape() {
            return Err(Error::Format(format!(
                "{name}: stored {shape:?}, model {:?}",
                like.shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        values.push(Tensor::param(data, &shape)?);
    }
    if r.at != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    model.set_parameters(&values)?;
    Ok((model, meta))
}

pub fn save<T: Scalar>(path: &Path, model: &TerraceNet<T>, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode(model, meta)?)
}

pub fn load<T: Scalar>(path: &Path) -> Result<(TerraceNet<T>, CheckpointMeta)> {
    decode(&std::fs::read(path)?)
}

/// Fresh model for `meta` with seeded initialization.
pub fn initialize<T: Scalar>(meta: &CheckpointMeta, seed: u64) -> Result<TerraceNet<T>> {
    TerraceNet::new(
        &meta.network,
        &mut <ModelRng as rand::SeedableRng>::seed_from_u64(seed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CheckpointMeta {
        let network = NetworkConfig {
            input_size: 32,
            base_channels: 4,
            heads: vec![1, 2, 2],
            windows: vec![4, 2, 2],
            head_width: 8,
            key_width: 4,
            ..NetworkConfig::default()
        };
        CheckpointMeta {
            network,
            grouping: Grouping::B,
            native_size: 32,
            step: 7,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = meta();
        let net = initialize::<f64>(&m, 5).unwrap();
        let bytes = encode(&net, &m).unwrap();
        let (back, m2) = decode::<f64>(&bytes).unwrap();
        assert_eq!(m2, m);
        for ((na, a), (nb, b)) in net.parameters().iter().zip(back.parameters()) {
            assert_eq!(na, &nb);
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(encode(&back, &m2).unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_rejected() {
        let m = meta();
        let bytes = encode(&initialize::<f64>(&m, 0).unwrap(), &m).unwrap();
        assert!(decode::<f64>(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f64>(&bad).is_err());
    }
}
