//! Versioned binary container shared by checkpoints and dataset caches.
//!
//! Layout (little endian):
//!
//! ```text
//! magic        8 bytes
//! version      u32
//! payload_len  u64
//! sha256       32 bytes of the payload
//! payload      bincode
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

const HEADER_LEN: usize = 8 + 4 + 8 + 32;

pub(crate) fn encode<T: Serialize>(magic: &[u8; 8], version: u32, value: &T) -> Vec<u8> {
    let payload = bincode::serialize(value).expect("in-memory serialization cannot fail");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    out
}

/// Decodes a container; the error string says what was wrong.
pub(crate) fn decode<T: DeserializeOwned>(magic: &[u8; 8], version: u32, bytes: &[u8]) -> std::result::Result<T, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("file is truncated ({} bytes, header needs {HEADER_LEN})", bytes.len()));
    }
    if &bytes[..8] != magic {
        return Err("bad magic bytes".into());
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(format!("file has format version {found}"));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len {
        return Err(format!("payload is {} bytes, header declares {len}", payload.len()));
    }
    if Sha256::digest(payload).as_slice() != &bytes[20..52] {
        return Err("payload checksum mismatch".into());
    }
    bincode::deserialize(payload).map_err(|e| format!("payload does not decode: {e}"))
}

/// Writes through a temporary sibling file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(format!("creating {}", dir.display()), e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| AppError::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(bytes).map_err(|e| AppError::io(format!("writing {}", tmp.display()), e))?;
    f.sync_all().map_err(|e| AppError::io(format!("syncing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(format!("renaming to {}", path.display()), e))
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(format!("reading {}", path.display()), e))
}
