//! Shared framing for the on-disk formats: a UTF-8 text header of `key value` lines, a
//! `---` separator line, then a raw binary payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const SEPARATOR: &str = "---";

#[derive(Debug, Error)]
pub enum HeaderError {
    #[error("missing `{SEPARATOR}` separator line")]
    MissingSeparator,
    #[error("header is not valid UTF-8")]
    NotUtf8,
    #[error("unexpected schema `{found}` (expected `{expected}`)")]
    Schema { expected: String, found: String },
    #[error("missing header key `{0}`")]
    MissingKey(String),
    #[error("bad value for header key `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

/// Parsed text header.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub schema: String,
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(schema: impl Into<String>) -> Self {
        Self {
            schema: schema.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let value: String = value.into();
        debug_assert!(!value.contains('\n'));
        self.entries.push((key.into(), value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, HeaderError> {
        self.get(key)
            .ok_or_else(|| HeaderError::MissingKey(key.to_string()))
    }

    /// Parses a whitespace-separated list of numbers under `key`.
    pub fn numbers<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, HeaderError> {
        self.require(key)?
            .split_whitespace()
            .map(|t| {
                t.parse::<T>().map_err(|_| HeaderError::BadValue {
                    key: key.to_string(),
                    reason: format!("`{t}` is not a number"),
                })
            })
            .collect()
    }

    pub fn expect_schema(&self, expected: &str) -> Result<(), HeaderError> {
        if self.schema == expected {
            Ok(())
        } else {
            Err(HeaderError::Schema {
                expected: expected.to_string(),
                found: self.schema.clone(),
            })
        }
    }

    pub fn encode(&self, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(payload.len() + 256);
        out.extend_from_slice(self.schema.as_bytes());
        out.push(b'\n');
        for (k, v) in &self.entries {
            out.extend_from_slice(k.as_bytes());
            if !v.is_empty() {
                out.push(b' ');
                out.extend_from_slice(v.as_bytes());
            }
            out.push(b'\n');
        }
        out.extend_from_slice(SEPARATOR.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(payload);
        out
    }

    /// Splits a file into its header and payload.
    pub fn decode(bytes: &[u8]) -> Result<(Header, &[u8]), HeaderError> {
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or(HeaderError::MissingSeparator)?;
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| HeaderError::NotUtf8)?;
            pos += nl + 1;
            if line == SEPARATOR {
                break;
            }
            lines.push(line);
        }
        let mut it = lines.into_iter();
        let schema = it.next().ok_or(HeaderError::MissingSeparator)?.to_string();
        let entries = it
            .filter(|l| !l.trim().is_empty())
            .map(|l| match l.split_once(' ') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => (l.to_string(), String::new()),
            })
            .collect();
        Ok((Header { schema, entries }, &bytes[pos..]))
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let mut h = Header::new("S2R-TEST 1");
        h.push("dims", "3 4");
        h.push("meta", "subject s-01");
        let bytes = h.encode(&[1, 2, 3, b'\n']);
        let (back, payload) = Header::decode(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(payload, &[1, 2, 3, b'\n']);
        assert_eq!(back.numbers::<usize>("dims").unwrap(), vec![3, 4]);
    }

    #[test]
    fn missing_separator_is_reported() {
        assert!(matches!(
            Header::decode(b"S2R-TEST 1\ndims 3 4\n"),
            Err(HeaderError::MissingSeparator)
        ));
    }
}
