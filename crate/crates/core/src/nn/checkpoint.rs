//! Model checkpoint container.
//!
//! Layout: the magic line `PASSPILOT1`, a length-prefixed JSON header, then
//! length-prefixed named parameter blocks of little-endian f32 values. The
//! header carries whatever configuration the owning model needs to validate
//! compatibility before reading weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::store::ParamStore;
use super::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8] = b"PASSPILOT1\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("malformed checkpoint: {0}")]
    Corrupt(String),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
}

pub fn save<E: Scalar>(
    path: &Path,
    header: &serde_json::Value,
    store: &ParamStore<E>,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let header_bytes = serde_json::to_vec(header)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, tensor) in store.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(tensor.numel() * 4);
        for &v in tensor.data() {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load<E: Scalar>(path: &Path) -> Result<(serde_json::Value, ParamStore<E>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; MAGIC.len()];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = read_u32(&mut r)? as usize;
    if header_len > 64 << 20 {
        return Err(CheckpointError::Corrupt("oversized header".into()));
    }
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: serde_json::Value = serde_json::from_slice(&header_bytes)?;

    let count = read_u32(&mut r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt("oversized parameter name".into()));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Corrupt("parameter name not utf-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 2 {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {name} has rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > 1 << 28 {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {name} too large"
            )));
        }
        let mut buf = vec![0u8; numel * 4];
        r.read_exact(&mut buf).map_err(|_| {
            CheckpointError::Corrupt(format!("truncated data for parameter {name}"))
        })?;
        let data = buf
            .chunks_exact(4)
            .map(|c| E::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        store.insert(name, Tensor::new(shape, data));
    }
    Ok((header, store))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| CheckpointError::Corrupt("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_preserves_header_and_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ppck");
        let mut store: ParamStore<f32> = ParamStore::new();
        store.insert("a.w", Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, 4.0, 5.5, -6.0]));
        store.insert("a.b", Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]));
        let header = json!({"format_version": 1, "note": "test"});
        save(&path, &header, &store).unwrap();
        let (h2, s2): (_, ParamStore<f32>) = load(&path).unwrap();
        assert_eq!(h2["note"], "test");
        assert_eq!(s2.len(), 2);
        assert_eq!(s2.get("a.w"), store.get("a.w"));
        assert_eq!(s2.get("a.b"), store.get("a.b"));
    }

    #[test]
    fn rejects_files_without_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        match load::<f32>(&path) {
            Err(CheckpointError::BadMagic) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ppck");
        let mut store: ParamStore<f32> = ParamStore::new();
        store.insert("w", Tensor::new(vec![4, 4], vec![1.0; 16]));
        save(&path, &serde_json::json!({}), &store).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load::<f32>(&path),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
