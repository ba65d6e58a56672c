//! Binary container shared by backbone, expert, embedding and dataset files.
//!
//! ```text
//! magic      4 bytes ("PIFB" | "PIFX" | "PIFE" | "PIFD")
//! version    u32 LE
//! header_len u32 LE
//! header     UTF-8 `key=value` lines
//! count      u64 LE
//! payload    count x f64 LE
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const BACKBONE_MAGIC: &[u8; 4] = b"PIFB";
pub const EXPERT_MAGIC: &[u8; 4] = b"PIFX";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"PIFE";
pub const DATASET_MAGIC: &[u8; 4] = b"PIFD";

/// Ordered key-value header. Keys may repeat (e.g. one `segment` per layout entry).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        debug_assert!(!key.contains('=') && !key.contains('\n'));
        debug_assert!(!value.contains('\n'));
        self.entries.push((key.to_string(), value));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries.iter().filter(|(k, _)| k == key).map(|(_, v)| v.as_str()).collect()
    }

    pub fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::format(path, format!("missing header key `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self.require(key, path)?;
        raw.parse().map_err(|_| Error::format(path, format!("bad value {raw:?} for `{key}`")))
    }

    fn encode(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    fn decode(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("header line without `=`: {line:?}")))?;
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }
}

pub fn encode(magic: &[u8; 4], header: &Header, payload: &[f64]) -> Vec<u8> {
    let text = header.encode();
    let mut out = Vec::with_capacity(24 + text.len() + payload.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(magic: &[u8; 4], bytes: &[u8], path: &Path) -> Result<(Header, Vec<f64>)> {
    let short = || Error::format(path, "truncated file");
    if bytes.len() < 12 {
        return Err(short());
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hend = 12 + hlen;
    if bytes.len() < hend + 8 {
        return Err(short());
    }
    let text = std::str::from_utf8(&bytes[12..hend]).map_err(|_| Error::format(path, "header is not UTF-8"))?;
    let header = Header::decode(text, path)?;
    let count = u64::from_le_bytes(bytes[hend..hend + 8].try_into().unwrap()) as usize;
    let body = &bytes[hend + 8..];
    if body.len() != count * 8 {
        return Err(Error::format(path, format!("payload holds {} bytes, header says {count} floats", body.len())));
    }
    let payload = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, payload))
}

pub fn write_file(path: &Path, magic: &[u8; 4], header: &Header, payload: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_atomic(path, &encode(magic, header, payload))
}

/// Writes to a sibling temp file, then renames over `path`, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path, magic: &[u8; 4]) -> Result<(Header, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(magic, &bytes, path)
}

pub(crate) fn join_usize(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn split_usize(s: &str, key: &str, path: &Path) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.parse().map_err(|_| Error::format(path, format!("bad list entry {p:?} for `{key}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_and_magic_check() {
        let mut h = Header::new();
        h.push("kind", "adapter").push("segment", "a 2 @0").push("segment", "b 1 @2");
        let payload = [1.5, -0.0, f64::MIN_POSITIVE];
        let bytes = encode(EXPERT_MAGIC, &h, &payload);
        let p = Path::new("mem");
        let (h2, p2) = decode(EXPERT_MAGIC, &bytes, p).unwrap();
        assert_eq!(h, h2);
        assert_eq!(h2.get_all("segment").len(), 2);
        assert_eq!(
            p2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            payload.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(decode(BACKBONE_MAGIC, &bytes, p).is_err());
        assert!(decode(EXPERT_MAGIC, &bytes[..bytes.len() - 1], p).is_err());
    }
}
