//! Single-file archive: a JSON config document plus named little-endian f32
//! arrays. Used for network checkpoints and optimizer state.
//!
//! Layout (all integers little-endian u64 unless noted):
//!   magic "SSAR" | format u32 | json_len, json bytes | n_entries
//!   then per entry: name_len, name bytes | ndim, dims... | data_len, f32 data

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SSAR";
pub const ARCHIVE_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not an archive (bad magic)")]
    BadMagic { path: String },
    #[error("unsupported archive format {found} (supported: {supported})")]
    UnsupportedFormat { found: u32, supported: u32 },
    #[error("corrupt archive {path}: {msg}")]
    Corrupt { path: String, msg: String },
}

#[derive(Debug, Clone)]
pub struct Archive {
    pub config_json: String,
    pub entries: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn entry_map(self) -> HashMap<String, Tensor> {
        self.entries.into_iter().collect()
    }
}

pub fn write_archive(path: &Path, archive: &Archive) -> Result<(), ArchiveError> {
    let io_err = |source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(io_err);

    emit(MAGIC)?;
    emit(&ARCHIVE_FORMAT.to_le_bytes())?;
    let json = archive.config_json.as_bytes();
    emit(&(json.len() as u64).to_le_bytes())?;
    emit(json)?;
    emit(&(archive.entries.len() as u64).to_le_bytes())?;
    for (name, tensor) in &archive.entries {
        let name_bytes = name.as_bytes();
        emit(&(name_bytes.len() as u64).to_le_bytes())?;
        emit(name_bytes)?;
        emit(&(tensor.shape.len() as u64).to_le_bytes())?;
        for &d in &tensor.shape {
            emit(&(d as u64).to_le_bytes())?;
        }
        emit(&(tensor.data.len() as u64).to_le_bytes())?;
        for &v in &tensor.data {
            emit(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_archive(path: &Path) -> Result<Archive, ArchiveError> {
    let io_err = |source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    };
    let corrupt = |msg: &str| ArchiveError::Corrupt {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let file = File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(ArchiveError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let format = u32::from_le_bytes(u32buf);
    if format != ARCHIVE_FORMAT {
        return Err(ArchiveError::UnsupportedFormat {
            found: format,
            supported: ARCHIVE_FORMAT,
        });
    }

    let mut u64buf = [0u8; 8];
    let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64, ArchiveError> {
        r.read_exact(&mut u64buf).map_err(io_err)?;
        Ok(u64::from_le_bytes(u64buf))
    };

    let json_len = read_u64(&mut r)? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(io_err)?;
    let config_json =
        String::from_utf8(json).map_err(|_| corrupt("config json is not utf-8"))?;

    let n_entries = read_u64(&mut r)? as usize;
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name_len = read_u64(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|_| corrupt("entry name is not utf-8"))?;
        let ndim = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let data_len = read_u64(&mut r)? as usize;
        if shape.iter().product::<usize>() != data_len {
            return Err(corrupt(&format!("entry {name}: shape/data length mismatch")));
        }
        let mut bytes = vec![0u8; data_len * 4];
        r.read_exact(&mut bytes).map_err(io_err)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok(Archive {
        config_json,
        entries,
    })
}
