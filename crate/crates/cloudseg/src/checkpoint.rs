//! Versioned flat-file parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!   magic "CSEGCKPT" (8 bytes) | version u32 | count u64
//!   then per parameter:
//!   name_len u32 | name bytes | trainable u8 | rank u32 |
//!   extents u64 × rank | payload f64 × numel
//!
//! Loading into an existing registry matches entries by name and shape,
//! so a checkpoint only ever restores a model built from the same
//! configuration.

use crate::params::{Param, ParamStore};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"CSEGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {found} (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated or corrupt checkpoint: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("checkpoint does not match this model: {0}")]
    Mismatch(String),
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    let path_str = path.display().to_string();
    let io_err = |source| CheckpointError::Io {
        path: path_str.clone(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let mut write = |bytes: &[u8]| -> Result<(), CheckpointError> {
        w.write_all(bytes).map_err(|source| CheckpointError::Io {
            path: path_str.clone(),
            source,
        })
    };
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(store.len() as u64).to_le_bytes())?;
    for (_, p) in store.iter() {
        write(&(p.name.len() as u32).to_le_bytes())?;
        write(p.name.as_bytes())?;
        write(&[u8::from(p.trainable)])?;
        write(&(p.shape.len() as u32).to_le_bytes())?;
        for &e in &p.shape {
            write(&(e as u64).to_le_bytes())?;
        }
        for v in &p.data {
            write(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a checkpoint into a fresh registry.
pub fn read_checkpoint(path: &Path) -> Result<ParamStore, CheckpointError> {
    let path_str = path.display().to_string();
    let io_err = |source| CheckpointError::Io {
        path: path_str.clone(),
        source,
    };
    let mut r = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err)?);

    fn take<const N: usize>(
        r: &mut impl Read,
        path: &str,
        what: &str,
    ) -> Result<[u8; N], CheckpointError> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf).map_err(|_| CheckpointError::Corrupt {
            path: path.to_string(),
            reason: format!("unexpected end of file reading {what}"),
        })?;
        Ok(buf)
    }

    let magic: [u8; 8] = take(&mut r, &path_str, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: path_str });
    }
    let version = u32::from_le_bytes(take(&mut r, &path_str, "version")?);
    if version != VERSION {
        return Err(CheckpointError::Version {
            path: path_str,
            found: version,
            expected: VERSION,
        });
    }
    let count = u64::from_le_bytes(take(&mut r, &path_str, "count")?) as usize;
    let mut store = ParamStore::new();
    for i in 0..count {
        let name_len = u32::from_le_bytes(take(&mut r, &path_str, "name length")?) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| CheckpointError::Corrupt {
                path: path_str.clone(),
                reason: format!("unexpected end of file in name of entry {i}"),
            })?;
        let name = String::from_utf8(name_bytes).map_err(|_| CheckpointError::Corrupt {
            path: path_str.clone(),
            reason: format!("entry {i} name is not utf-8"),
        })?;
        let trainable = take::<1>(&mut r, &path_str, "trainable flag")?[0] != 0;
        let rank = u32::from_le_bytes(take(&mut r, &path_str, "rank")?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut r, &path_str, "extent")?) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(take(&mut r, &path_str, "payload")?));
        }
        store.add(name, shape, data, trainable);
    }
    Ok(store)
}

/// Restore checkpointed values into a registry built from the same
/// configuration; names, shapes, and order must all match.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<(), CheckpointError> {
    let loaded = read_checkpoint(path)?;
    if loaded.len() != store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} entries in file, {} in model",
            loaded.len(),
            store.len()
        )));
    }
    for (id, file_param) in loaded.iter() {
        let here: &Param = store.get(id);
        if here.name != file_param.name || here.shape != file_param.shape {
            return Err(CheckpointError::Mismatch(format!(
                "entry {} is {} {:?} in file but {} {:?} in model",
                id.0, file_param.name, file_param.shape, here.name, here.shape
            )));
        }
    }
    for (id, file_param) in loaded.iter() {
        store.get_mut(id).data.copy_from_slice(&file_param.data);
    }
    Ok(())
}
