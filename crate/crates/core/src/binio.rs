//! Versioned binary container shared by checkpoints and feature files.
//!
//! Layout: 8-byte magic, `u32` version, length-prefixed JSON header, a count
//! of `f64` arrays each stored as a `u64` length plus little-endian values,
//! and a SHA-256 digest of everything before it.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DIGEST_LEN: usize = 32;

pub(crate) fn encode<H: Serialize>(
    magic: &[u8; 8],
    version: u32,
    header: &H,
    arrays: &[&[f64]],
) -> Result<Vec<u8>> {
    let json =
        serde_json::to_vec(header).map_err(|e| Error::Format(format!("header encoding: {e}")))?;
    let payload: usize = arrays.iter().map(|a| 8 + 8 * a.len()).sum();
    let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + 8 + payload + DIGEST_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for v in *a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

pub(crate) fn decode<H: DeserializeOwned>(
    bytes: &[u8],
    magic: &[u8; 8],
    version: u32,
) -> Result<(H, Vec<Vec<f64>>)> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "not a {} file (bad magic)",
            String::from_utf8_lossy(magic).trim_end()
        )));
    }
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(Error::Corrupt("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let mut cur = Cursor { buf: body, pos: 8 };
    let found = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::Format(format!(
            "unsupported version {found} (expected {version})"
        )));
    }
    let hlen = cur.u64("header length")? as usize;
    let header = serde_json::from_slice(cur.take(hlen, "header")?)
        .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    let count = cur.u64("array count")? as usize;
    let mut arrays = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = cur.u64("array length")? as usize;
        let raw = cur.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Corrupt("array length overflow".into()))?,
            &format!("array {i}"),
        )?;
        arrays.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
    }
    if cur.pos != body.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes",
            body.len() - cur.pos
        )));
    }
    Ok((header, arrays))
}
