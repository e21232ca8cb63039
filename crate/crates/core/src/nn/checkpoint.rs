//! Binary checkpoint: `M102`, u32 version, u32-prefixed JSON config, u32
//! block count, then per block its rank, dims and row-major f64 data. All
//! integers and floats little-endian.

use std::fs;
use std::path::Path;

use crate::error::CheckpointError;
use crate::nn::config::ModelConfig;
use crate::nn::model::Model;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"M102";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    let mut out = Vec::with_capacity(16 + config.len() + 8 * model.param_count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for t in model.params.tensors() {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let blocks = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(blocks.min(1 << 16));
    for _ in 0..blocks {
        let rank = r.u32()? as usize;
        if rank > 3 {
            return Err(CheckpointError::Incompatible(format!("block of rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
        let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::new(&shape, data).map_err(|e| CheckpointError::Incompatible(e.0))?);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Incompatible(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Model::from_parts(config, tensors)
}

/// Writes the binary checkpoint and a `.json` config mirror next to it.
pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(model))?;
    let mirror = serde_json::to_string_pretty(model.config()).expect("config serializes");
    fs::write(path.with_extension("json"), mirror)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let model = Model::new(ModelConfig::equivariant(2, 1, 1), 5).unwrap();
        let back = decode(&encode(&model)).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.config(), model.config());
        let plain = Model::new(ModelConfig::plain(4, 1, 2), 5).unwrap();
        assert_eq!(decode(&encode(&plain)).unwrap().params, plain.params);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode(&Model::new(ModelConfig::equivariant(2, 1, 1), 5).unwrap());
        for cut in [0, 3, 7, 12, 40, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(CheckpointError::Version(9))));
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long).is_err());
    }

    #[test]
    fn incompatible_config_is_rejected() {
        let a = Model::new(ModelConfig::equivariant(2, 1, 1), 0).unwrap();
        let b = Model::new(ModelConfig::equivariant(4, 1, 1), 0).unwrap();
        let tensors = a.params.tensors().cloned().collect();
        assert!(matches!(Model::from_parts(b.config().clone(), tensors), Err(CheckpointError::Incompatible(_))));
    }
}
