//! Small binary container used by dataset and model files: a text (JSON)
//! header followed by named, checksummed byte blocks.
//!
//! Layout:
//!
//! ```text
//! magic "TSTK" | kind (4 bytes) | version u32 | header_len u32 | header JSON
//! n_blocks u32
//!   { name_len u32 | name | payload_len u64 | payload | sha256(payload) } *
//! sha256(everything above)
//! ```
//!
//! All integers are little-endian. Any truncation or bit flip surfaces as
//! [`DataError::Corrupt`], never a panic.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::DataError;

const MAGIC: &[u8; 4] = b"TSTK";

#[derive(Debug)]
pub struct Container {
    pub version: u32,
    pub header: serde_json::Value,
    pub blocks: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn block(&self, name: &str) -> Result<&[u8], DataError> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| DataError::Corrupt(format!("missing block '{name}'")))
    }
}

pub fn write_container(
    path: &Path,
    kind: &[u8; 4],
    version: u32,
    header: &serde_json::Value,
    blocks: &[(&str, Vec<u8>)],
) -> Result<(), DataError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(kind);
    buf.extend_from_slice(&version.to_le_bytes());
    let header_bytes = serde_json::to_vec(header)?;
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, payload) in blocks {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        buf.extend_from_slice(payload);
        buf.extend_from_slice(&Sha256::digest(payload));
    }
    let total = Sha256::digest(&buf);
    buf.extend_from_slice(&total);

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_container(
    path: &Path,
    kind: &[u8; 4],
    expected_version: u32,
) -> Result<Container, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 44 {
        return Err(DataError::Corrupt("file shorter than any valid container".into()));
    }
    let (body, file_sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != file_sum {
        return Err(DataError::Corrupt("file checksum mismatch".into()));
    }

    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(DataError::BadMagic);
    }
    let found_kind = cur.take(4)?.to_vec();
    if found_kind != kind {
        return Err(DataError::WrongKind {
            found: String::from_utf8_lossy(&found_kind).into_owned(),
            expected: String::from_utf8_lossy(kind).into_owned(),
        });
    }
    let version = cur.u32()?;
    if version != expected_version {
        return Err(DataError::VersionMismatch {
            found: version,
            expected: expected_version,
        });
    }
    let header_len = cur.u32()? as usize;
    let header: serde_json::Value = serde_json::from_slice(cur.take(header_len)?)?;
    let n_blocks = cur.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8_lossy(cur.take(name_len)?).into_owned();
        let payload_len = cur.u64()? as usize;
        let payload = cur.take(payload_len)?.to_vec();
        let sum = cur.take(32)?;
        if Sha256::digest(&payload).as_slice() != sum {
            return Err(DataError::Corrupt(format!("checksum mismatch in block '{name}'")));
        }
        blocks.push((name, payload));
    }
    Ok(Container {
        version,
        header,
        blocks,
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Corrupt("unexpected end of file".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
