//! `TCM1` checkpoints: magic, a manifest of parameter names and shapes, then
//! every value as little-endian `f64` in manifest order.
//!
//! ```text
//! "TCM1" u32 count
//! count x { u32 name_len, name bytes, u32 ndim, ndim x u32 dim }
//! all values, f64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::termcast::TermCast;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCM1";

pub fn write_checkpoint<W: Write>(model: &TermCast, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for p in model.params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for p in model.params.iter() {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

/// Reads a checkpoint into a freshly built model for `config`. The manifest
/// must match the model's parameters exactly, name for name and shape for shape.
pub fn read_checkpoint<R: Read>(config: &ModelConfig, mut r: R) -> Result<TermCast> {
    let mut model = TermCast::new(config.clone(), 0)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let count = read_u32(&mut r)? as usize;
    if count != model.params.len() {
        return Err(Error::Config(format!(
            "checkpoint has {count} parameters, config expects {}",
            model.params.len()
        )));
    }
    let expected: Vec<(String, Vec<usize>)> =
        model.params.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect();
    for (name, shape) in &expected {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(Error::Format(format!("parameter name length {len} too large")));
        }
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let got_name = String::from_utf8(bytes).map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("parameter {got_name} has {ndim} dims")));
        }
        let dims = (0..ndim).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &got_name != name || &dims != shape {
            return Err(Error::Config(format!(
                "checkpoint parameter {got_name} {dims:?} does not match {name} {shape:?}"
            )));
        }
    }
    let mut buf = [0u8; 8];
    for p in model.params.iter_mut() {
        for v in p.value.data_mut() {
            r.read_exact(&mut buf).map_err(truncated)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint values".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &TermCast, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(config: &ModelConfig, path: &Path) -> Result<TermCast> {
    read_checkpoint(config, BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        let mut c = ModelConfig::new(2, 2, 24).with_relation_dim(8);
        c.conv_filters = 4;
        c
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let model = TermCast::new(config(), 5).unwrap();
        let mut first = Vec::new();
        write_checkpoint(&model, &mut first).unwrap();
        let back = read_checkpoint(&config(), first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_checkpoint(&back, &mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(&first[..4], b"TCM1");
    }

    #[test]
    fn rejects_mismatched_config() {
        let model = TermCast::new(config(), 5).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        let other = config().with_relation_dim(12);
        assert!(matches!(read_checkpoint(&other, bytes.as_slice()), Err(Error::Config(_))));
        assert!(matches!(read_checkpoint(&config(), &bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&config(), bytes.as_slice()), Err(Error::Format(_))));
    }
}
