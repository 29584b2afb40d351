//! Shared on-disk container: a UTF-8 text header, a block of little-endian
//! `f64` values, then a CRC-32 of everything before it.
//!
//! ```text
//! MMMP-BUNDLE 1
//! <header lines>
//! payload <count>
//! end
//! <count * 8 bytes>
//! <crc32, 4 bytes LE>
//! ```

use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("checksum failure: {0}")]
    ChecksumFailure(String),
}

/// Escapes whitespace, `%` and control characters so a name fits in one
/// header token.
pub fn escape_token(s: &str) -> String {
    if s.is_empty() {
        return "%00".to_string();
    }
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        if ch == '%' || ch.is_whitespace() || ch.is_control() {
            let mut buf = [0u8; 4];
            for b in ch.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        } else {
            out.push(ch);
        }
    }
    out
}

pub fn unescape_token(s: &str) -> Result<String, FormatError> {
    if s == "%00" {
        return Ok(String::new());
    }
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s
                .get(i + 1..i + 3)
                .and_then(|h| u8::from_str_radix(h, 16).ok())
                .ok_or_else(|| FormatError::CorruptHeader(format!("bad escape in token '{s}'")))?;
            out.push(hex);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out)
        .map_err(|_| FormatError::CorruptHeader(format!("token '{s}' is not UTF-8")))
}

pub fn write_container<W: Write>(
    mut out: W,
    magic: &str,
    version: u32,
    header: &[String],
    payload: &[f64],
) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(256 + header.len() * 32 + payload.len() * 8 + 4);
    bytes.extend_from_slice(format!("{magic} {version}\n").as_bytes());
    for line in header {
        debug_assert!(!line.contains('\n'));
        bytes.extend_from_slice(line.as_bytes());
        bytes.push(b'\n');
    }
    bytes.extend_from_slice(format!("payload {}\nend\n", payload.len()).as_bytes());
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    out.write_all(&bytes)?;
    out.flush()
}

/// Parsed container: header lines (without magic, payload and end lines)
/// and the decoded payload.
#[derive(Debug, Clone)]
pub struct Container {
    pub header: Vec<String>,
    pub payload: Vec<f64>,
}

pub fn read_container(bytes: &[u8], magic: &str, version: u32) -> Result<Container, FormatError> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<&str, FormatError> {
        let rest = &bytes[*pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| FormatError::CorruptHeader("header is not terminated".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| FormatError::CorruptHeader("header is not UTF-8".into()))?;
        *pos += nl + 1;
        Ok(line)
    };

    let first = next_line(&mut pos)?;
    let mut parts = first.split_whitespace();
    if parts.next() != Some(magic) {
        return Err(FormatError::CorruptHeader(format!(
            "expected '{magic}' magic"
        )));
    }
    let found = parts.next().unwrap_or("").to_string();
    if found != version.to_string() {
        return Err(FormatError::VersionMismatch {
            found,
            expected: version,
        });
    }

    let mut header = Vec::new();
    let mut count: Option<usize> = None;
    loop {
        let line = next_line(&mut pos)?;
        if line == "end" {
            break;
        }
        if let Some(n) = line.strip_prefix("payload ") {
            count = Some(
                n.trim()
                    .parse()
                    .map_err(|_| FormatError::CorruptHeader(format!("bad payload count '{n}'")))?,
            );
        } else {
            header.push(line.to_string());
        }
    }
    let count = count.ok_or_else(|| FormatError::CorruptHeader("missing payload count".into()))?;
    let expected = count
        .checked_mul(8)
        .and_then(|b| b.checked_add(4))
        .ok_or_else(|| FormatError::CorruptHeader("payload count overflows".into()))?;
    let remaining = bytes.len() - pos;
    if remaining != expected {
        return Err(FormatError::ChecksumFailure(format!(
            "payload is {remaining} bytes, header declares {expected}"
        )));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(&bytes[..body_end]);
    if stored != actual {
        return Err(FormatError::ChecksumFailure(format!(
            "stored crc {stored:08x}, computed {actual:08x}"
        )));
    }
    let payload = bytes[pos..body_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Container { header, payload })
}

/// CRC-32 identifying a file image, as printed by the CLI: the CRC of
/// everything before the trailer. Hashing the whole image would not do, since
/// a CRC over data followed by its own CRC is the same constant for every
/// file.
pub fn file_checksum(bytes: &[u8]) -> u32 {
    crc32fast::hash(&bytes[..bytes.len().saturating_sub(4)])
}
