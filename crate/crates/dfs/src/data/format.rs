//! Manifest and blob primitives shared by every on-disk artifact.

use std::fs;
use std::path::Path;

use super::DataError;

/// Version tag written into every manifest.
pub const FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `values` as little-endian `f32`, row-major.
pub fn write_blob_f32(path: &Path, values: &[f32]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Reads exactly `expected_len` little-endian `f32` values.
pub fn read_blob_f32(path: &Path, expected_len: usize) -> Result<Vec<f32>, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(DataError::TruncatedBlob {
            path: path.display().to_string(),
            got: bytes.len(),
            expected: expected_len * 4,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// An ordered list of `key: value` lines.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(kind: &str) -> Self {
        let mut m = Self::default();
        m.push("format_version", FORMAT_VERSION.to_string());
        m.push("kind", kind.to_string());
        m
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_string(), value.into()));
    }

    pub fn get(&self, key: &str) -> Result<&str, DataError> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| DataError::MissingKey {
                key: key.to_string(),
            })
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, DataError> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| DataError::BadValue {
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    /// Parses a whitespace-separated list of sizes.
    pub fn get_usize_list(&self, key: &str) -> Result<Vec<usize>, DataError> {
        let raw = self.get(key)?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| DataError::BadValue {
                    key: key.to_string(),
                    value: raw.to_string(),
                })
            })
            .collect()
    }

    /// Validates the version tag and the manifest kind.
    pub fn expect_kind(&self, kind: &str) -> Result<(), DataError> {
        let version = self.get("format_version")?;
        if version != FORMAT_VERSION.to_string() {
            return Err(DataError::VersionMismatch {
                found: version.to_string(),
                expected: FORMAT_VERSION,
            });
        }
        let found = self.get("kind")?;
        if found != kind {
            return Err(DataError::KindMismatch {
                found: found.to_string(),
                expected: kind.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(": ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or(DataError::MalformedManifest { line: i + 1 })?;
            entries.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_text()).map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text)
    }
}

/// FNV-1a hash of a canonical text rendering, as fixed-width hex. Used to
/// fingerprint configurations inside checkpoints and reports.
pub fn fingerprint64(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
