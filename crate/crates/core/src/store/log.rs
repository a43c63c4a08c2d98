//! Append-only record files.
//!
//! Each record is a 4-byte big-endian payload length, an 8-byte checksum
//! (leading bytes of the payload's SHA-256) and the payload. A record cut
//! short at the end of the file is the remains of an interrupted append and
//! is truncated away on open; a bad record anywhere else is corruption.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

const HEADER: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt record at offset {offset} in {path}")]
    Corrupt { path: PathBuf, offset: u64 },
}

pub struct RecordLog {
    path: PathBuf,
    file: File,
    sync: bool,
}

/// Records read back from an existing log.
pub struct Recovered {
    pub records: Vec<Vec<u8>>,
    /// Bytes dropped from an incomplete final record.
    pub truncated: u64,
}

fn checksum(payload: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(payload);
    digest[..8].try_into().expect("8 bytes")
}

pub fn encode(payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER + payload.len());
    buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(&checksum(payload));
    buf.extend_from_slice(payload);
    buf
}

impl RecordLog {
    /// Opens (creating if needed) the log at `path`, returning every intact
    /// record.
    pub fn open(path: &Path, sync: bool) -> Result<(RecordLog, Recovered), LogError> {
        let io_err = |source| LogError::Io {
            path: path.to_owned(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io_err)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err)?;

        let mut records = Vec::new();
        let mut offset = 0usize;
        let mut truncated = 0u64;
        while offset < bytes.len() {
            let rest = &bytes[offset..];
            let complete = rest.len() >= HEADER && {
                let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
                rest.len() >= HEADER + len
            };
            if !complete {
                truncated = rest.len() as u64;
                break;
            }
            let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
            let payload = &rest[HEADER..HEADER + len];
            if rest[4..HEADER] != checksum(payload) {
                if offset + HEADER + len == bytes.len() {
                    truncated = rest.len() as u64;
                    break;
                }
                return Err(LogError::Corrupt {
                    path: path.to_owned(),
                    offset: offset as u64,
                });
            }
            records.push(payload.to_vec());
            offset += HEADER + len;
        }
        if truncated > 0 {
            tracing::warn!(path = %path.display(), bytes = truncated, "truncating incomplete trailing record");
            file.set_len(offset as u64).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io_err)?;
        Ok((
            RecordLog {
                path: path.to_owned(),
                file,
                sync,
            },
            Recovered { records, truncated },
        ))
    }

    /// Appends one record. When the log is synchronous the record is on
    /// stable storage once this returns.
    pub fn append(&mut self, payload: &[u8]) -> Result<(), LogError> {
        let io_err = |source| LogError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(&encode(payload)).map_err(io_err)?;
        if self.sync {
            self.file.sync_data().map_err(io_err)?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads every intact record without modifying the file. An incomplete
/// trailing record is ignored.
pub fn read_records(path: &Path) -> Result<Vec<Vec<u8>>, LogError> {
    let bytes = std::fs::read(path).map_err(|source| LogError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut records = Vec::new();
    let mut offset = 0usize;
    while bytes.len() - offset >= HEADER {
        let len = u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
        let Some(payload) = bytes.get(offset + HEADER..offset + HEADER + len) else { break };
        if bytes[offset + 4..offset + HEADER] != checksum(payload) {
            if offset + HEADER + len == bytes.len() {
                break;
            }
            return Err(LogError::Corrupt {
                path: path.to_owned(),
                offset: offset as u64,
            });
        }
        records.push(payload.to_vec());
        offset += HEADER + len;
    }
    Ok(records)
}
