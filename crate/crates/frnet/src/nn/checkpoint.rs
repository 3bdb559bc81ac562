//! Model checkpoints.
//!
//! Layout, little-endian: magic "FRCK", version u32, config length u32 +
//! TOML bytes, parameter count u32, manifest entries {name u16+bytes,
//! rank u32, dims u32 x rank, offset u64}, then a payload of tensor
//! records (see tensor::io) at those offsets, in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{FrNet, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Dtype};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: impl AsRef<Path>, model: &FrNet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(&CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;

    let config_toml = toml::to_string(&model.config)
        .map_err(|e| Error::Format(format!("config serialization failed: {e}")))?;
    w.write_all(&(config_toml.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(config_toml.as_bytes()).map_err(io_err)?;

    // serialize payload records first so the manifest can carry offsets
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for p in model.params.iter() {
        let offset = payload.len() as u64;
        write_tensor(&mut payload, &p.value, Dtype::F64).map_err(io_err)?;
        entries.push((p.name.clone(), p.value.shape().to_vec(), offset));
    }

    w.write_all(&(entries.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, shape, offset) in &entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(name_bytes).map_err(io_err)?;
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
        }
        w.write_all(&offset.to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&payload).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FrNet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fmt_err = |what: &str| Error::Format(format!("checkpoint {}: {what}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| fmt_err("truncated header"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let version = read_u32(&mut r).map_err(|_| fmt_err("truncated version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }

    let config_len = read_u32(&mut r).map_err(|_| fmt_err("truncated config length"))? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)
        .map_err(|_| fmt_err("truncated config"))?;
    let config_str =
        String::from_utf8(config_bytes).map_err(|_| fmt_err("config is not utf-8"))?;
    let config: ModelConfig = toml::from_str(&config_str)
        .map_err(|e| Error::Format(format!("bad checkpoint config: {e}")))?;

    let count = read_u32(&mut r).map_err(|_| fmt_err("truncated manifest count"))? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len_buf = [0u8; 2];
        r.read_exact(&mut len_buf)
            .map_err(|_| fmt_err("truncated manifest entry"))?;
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| fmt_err("truncated manifest name"))?;
        let name = String::from_utf8(name).map_err(|_| fmt_err("manifest name not utf-8"))?;
        let rank = read_u32(&mut r).map_err(|_| fmt_err("truncated manifest rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r).map_err(|_| fmt_err("truncated manifest dims"))? as usize);
        }
        let mut off_buf = [0u8; 8];
        r.read_exact(&mut off_buf)
            .map_err(|_| fmt_err("truncated manifest offset"))?;
        entries.push((name, shape, u64::from_le_bytes(off_buf)));
    }

    // payload starts at the current position; offsets are relative to it
    let payload_start = r
        .stream_position()
        .map_err(|e| Error::io(path, e))?;

    let mut model = FrNet::new(config, 0)?;
    if model.params.len() != entries.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            entries.len(),
            model.params.len()
        )));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for (id, (name, shape, offset)) in ids.into_iter().zip(&entries) {
        let param = model.params.get(id);
        if &param.name != name {
            return Err(Error::Format(format!(
                "checkpoint parameter '{name}' does not match model parameter '{}'",
                param.name
            )));
        }
        if param.value.shape() != &shape[..] {
            return Err(Error::Format(format!(
                "parameter '{name}': checkpoint shape {shape:?} vs model {:?}",
                param.value.shape()
            )));
        }
        r.seek(SeekFrom::Start(payload_start + offset))
            .map_err(|e| Error::io(path, e))?;
        let value = read_tensor(&mut r)?;
        if value.shape() != &shape[..] {
            return Err(Error::Integrity(format!(
                "parameter '{name}': record shape {:?} vs manifest {shape:?}",
                value.shape()
            )));
        }
        model.params.get_mut(id).value = value;
    }
    Ok(model)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.frck");
        let model = FrNet::new(ModelConfig::small(), 42).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        for (a, b) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        let img = Tensor::full(&[3, 64, 64], 0.25).unwrap();
        assert_eq!(model.infer(&img).unwrap(), loaded.infer(&img).unwrap());
    }

    #[test]
    fn corrupt_checkpoint_fails_loudly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.frck");
        let model = FrNet::new(ModelConfig::small(), 42).unwrap();
        save_checkpoint(&path, &model).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());

        save_checkpoint(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
