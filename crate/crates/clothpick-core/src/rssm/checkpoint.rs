//! Versioned binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!   magic "RSSM" | version u32 | config echo (u32 length + UTF-8 text)
//!   then named tensors until EOF:
//!   name length u32 | name | rank u32 | dims (u64 × rank) | f64 LE data

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::rssm::model::{ModelConfig, RssmModel};
use crate::rssm::tape::Tensor;

const MAGIC: &[u8; 4] = b"RSSM";
const VERSION: u32 = 1;

pub fn write_checkpoint(
    path: &Path,
    config_text: &str,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg_bytes = config_text.as_bytes();
    w.write_all(&(cfg_bytes.len() as u32).to_le_bytes())?;
    w.write_all(cfg_bytes)?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        let dims: Vec<u64> = if tensor.cols == 1 {
            vec![tensor.rows as u64]
        } else {
            vec![tensor.rows as u64, tensor.cols as u64]
        };
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated checkpoint header field".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated checkpoint header field".into()))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?}, expected \"RSSM\""
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)
        .map_err(|_| Error::Format("truncated config echo".into()))?;
    let config_text = String::from_utf8(cfg_bytes)
        .map_err(|_| Error::Format("config echo is not UTF-8".into()))?;

    let mut tensors = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| Error::Format(format!("truncated tensor name after {} tensors", tensors.len())))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::Format(format!("tensor {name}: unsupported rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)? as usize);
        }
        let (rows, cols) = if rank == 1 {
            (dims[0], 1)
        } else {
            (dims[0], dims[1])
        };
        let count = rows * cols;
        let mut data = vec![0.0f64; count];
        for v in data.iter_mut() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("truncated data in tensor {name}")))?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.push((name, Tensor { rows, cols, data }));
    }
    Ok(Checkpoint {
        config_text,
        tensors,
    })
}

/// Persist the model (and optional optimizer tensors) with the resolved
/// config echoed into the header.
pub fn save_model(
    path: &Path,
    model: &RssmModel,
    config: &Config,
    extra: &[(String, Tensor)],
) -> Result<()> {
    let mut tensors: Vec<(String, &Tensor)> = model
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t))
        .collect();
    for (n, t) in extra {
        tensors.push((n.clone(), t));
    }
    write_checkpoint(path, &config.to_text(), &tensors)
}

/// Rebuild a model from a checkpoint; returns the echoed config and any
/// non-model tensors (optimizer state, counters).
pub fn load_model(path: &Path) -> Result<(RssmModel, Config, Vec<(String, Tensor)>)> {
    let ckpt = read_checkpoint(path)?;
    let config = Config::from_text(&ckpt.config_text)?;
    let model_cfg = ModelConfig::from_config(&config)?;
    let mut model = RssmModel::zeros(model_cfg);
    let mut extra = Vec::new();
    let mut seen = vec![false; model.params.len()];
    for (name, tensor) in ckpt.tensors {
        match model.params.id_of(&name) {
            Some(id) => {
                let slot = model.params.get_mut(id);
                if slot.rows != tensor.rows || slot.cols != tensor.cols {
                    return Err(Error::Format(format!(
                        "tensor {name}: shape {}x{} does not match model {}x{}",
                        tensor.rows, tensor.cols, slot.rows, slot.cols
                    )));
                }
                *slot = tensor;
                seen[id] = true;
            }
            None => extra.push((name, tensor)),
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Format(format!(
            "checkpoint is missing tensor {}",
            model.params.name(missing)
        )));
    }
    Ok((model, config, extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.rssm");
        let model = RssmModel::init(ModelConfig::tiny(), 3);
        let mut config = Config::default();
        model.cfg.apply_to(&mut config).unwrap();
        let extra = vec![(
            "train.step".to_string(),
            Tensor::vector(vec![42.0]),
        )];
        save_model(&path, &model, &config, &extra).unwrap();

        let (loaded, cfg2, extra2) = load_model(&path).unwrap();
        assert_eq!(cfg2, config);
        assert_eq!(loaded.params, model.params);
        assert_eq!(extra2.len(), 1);
        assert_eq!(extra2[0].0, "train.step");
        assert_eq!(extra2[0].1.data, vec![42.0]);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.rssm");
        std::fs::write(&path, b"NOPE00000000").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v9.rssm");
        let mut bytes = b"RSSM".to_vec();
        bytes.extend(9u32.to_le_bytes());
        bytes.extend(0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_tensor_data_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.rssm");
        let model = RssmModel::init(ModelConfig::tiny(), 5);
        let mut config = Config::default();
        model.cfg.apply_to(&mut config).unwrap();
        save_model(&path, &model, &config, &[]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }
}
