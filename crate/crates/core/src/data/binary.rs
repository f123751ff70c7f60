//! Little-endian matrix container.
//!
//! ```text
//! offset  size  field
//!      0     4  magic: "ZSLF" features | "ZSLA" attributes | "ZSLL" labels
//!      4     2  version (u16 LE): 1 = f32 payload, 2 = f64 payload
//!      6     2  reserved (u16 LE) = 0
//!      8     4  rows (u32 LE)
//!     12     4  cols (u32 LE), 1 for labels
//!     16     …  payload, row-major: f32/f64 LE values, or u32 LE class ids
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 16;
pub const VERSION_F32: u16 = 1;
pub const VERSION_F64: u16 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableKind {
    Features,
    Attributes,
    Labels,
}

impl TableKind {
    pub fn magic(self) -> &'static [u8; 4] {
        match self {
            TableKind::Features => b"ZSLF",
            TableKind::Attributes => b"ZSLA",
            TableKind::Labels => b"ZSLL",
        }
    }

    fn from_magic(m: &[u8]) -> Option<Self> {
        match m {
            b"ZSLF" => Some(TableKind::Features),
            b"ZSLA" => Some(TableKind::Attributes),
            b"ZSLL" => Some(TableKind::Labels),
            _ => None,
        }
    }
}

fn header(kind: TableKind, version: u16, rows: usize, cols: usize, origin: &str) -> Result<Vec<u8>> {
    let fmt = |detail: String| Error::Format { path: origin.to_string(), detail };
    let rows32 = u32::try_from(rows).map_err(|_| fmt(format!("{rows} rows exceed u32")))?;
    let cols32 = u32::try_from(cols).map_err(|_| fmt(format!("{cols} cols exceed u32")))?;
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(kind.magic());
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&cols32.to_le_bytes());
    Ok(out)
}

/// Encodes a matrix with an f32 (version 1) or f64 (version 2) payload.
pub fn encode_matrix(kind: TableKind, t: &Tensor, version: u16) -> Result<Vec<u8>> {
    let mut out = header(kind, version, t.rows(), t.cols(), "<memory>")?;
    match version {
        VERSION_F32 => {
            out.reserve(t.len() * 4);
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        VERSION_F64 => {
            out.reserve(t.len() * 8);
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        other => return Err(Error::invalid(format!("unknown container version {other}"))),
    }
    Ok(out)
}

pub fn encode_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = header(TableKind::Labels, VERSION_F32, labels.len(), 1, "<memory>")?;
    for &l in labels {
        let v = u32::try_from(l).map_err(|_| Error::invalid(format!("label {l} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Header {
    kind: TableKind,
    version: u16,
    rows: usize,
    cols: usize,
}

fn parse_header(bytes: &[u8], origin: &str) -> Result<Header> {
    let fmt = |detail: String| Error::Format { path: origin.to_string(), detail };
    if bytes.len() < HEADER_LEN {
        return Err(fmt(format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len())));
    }
    let kind = TableKind::from_magic(&bytes[0..4])
        .ok_or_else(|| fmt(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4]))))?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    let reserved = u16::from_le_bytes([bytes[6], bytes[7]]);
    if reserved != 0 {
        return Err(fmt(format!("reserved field is {reserved}, expected 0")));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    Ok(Header { kind, version, rows, cols })
}

/// Splits one container off the front of `bytes`, returning the payload
/// slice and the remainder.
fn split_payload<'a>(bytes: &'a [u8], h: &Header, origin: &str) -> Result<(&'a [u8], &'a [u8])> {
    let fmt = |detail: String| Error::Format { path: origin.to_string(), detail };
    let width = match (h.kind, h.version) {
        (TableKind::Labels, VERSION_F32) => 4,
        (_, VERSION_F32) => 4,
        (TableKind::Labels, _) => return Err(fmt(format!("labels need version 1, got {}", h.version))),
        (_, VERSION_F64) => 8,
        (_, v) => return Err(fmt(format!("unsupported version {v}"))),
    };
    let need = h
        .rows
        .checked_mul(h.cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| fmt(format!("dimension overflow: {} x {}", h.rows, h.cols)))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < need {
        return Err(fmt(format!("truncated payload: {} of {need} bytes", body.len())));
    }
    Ok((&body[..need], &body[need..]))
}

fn decode_values(payload: &[u8], h: &Header, origin: &str) -> Result<Tensor> {
    let values: Vec<f64> = if h.version == VERSION_F32 {
        payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
    } else {
        payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
    };
    let t = Tensor::from_vec(h.rows, h.cols, values)
        .map_err(|e| Error::Format { path: origin.to_string(), detail: e.to_string() })?;
    if let Some((row, col)) = t.first_non_finite() {
        return Err(Error::NonFiniteValue { row, col });
    }
    Ok(t)
}

/// Decodes one matrix container occupying all of `bytes`.
pub fn decode_matrix(bytes: &[u8], expected: TableKind, origin: &str) -> Result<Tensor> {
    let (t, rest) = decode_matrix_prefix(bytes, expected, origin)?;
    if !rest.is_empty() {
        return Err(Error::Format { path: origin.to_string(), detail: format!("{} trailing bytes", rest.len()) });
    }
    Ok(t)
}

/// Decodes one matrix container from the front of `bytes`.
pub fn decode_matrix_prefix<'a>(bytes: &'a [u8], expected: TableKind, origin: &str) -> Result<(Tensor, &'a [u8])> {
    let h = parse_header(bytes, origin)?;
    if h.kind != expected {
        return Err(Error::Format {
            path: origin.to_string(),
            detail: format!("expected {:?} container, found {:?}", expected, h.kind),
        });
    }
    let (payload, rest) = split_payload(bytes, &h, origin)?;
    Ok((decode_values(payload, &h, origin)?, rest))
}

pub fn decode_labels(bytes: &[u8], origin: &str) -> Result<Vec<usize>> {
    let fmt = |detail: String| Error::Format { path: origin.to_string(), detail };
    let h = parse_header(bytes, origin)?;
    if h.kind != TableKind::Labels {
        return Err(fmt(format!("expected Labels container, found {:?}", h.kind)));
    }
    if h.cols != 1 {
        return Err(fmt(format!("labels must have 1 column, got {}", h.cols)));
    }
    let (payload, rest) = split_payload(bytes, &h, origin)?;
    if !rest.is_empty() {
        return Err(fmt(format!("{} trailing bytes", rest.len())));
    }
    Ok(payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_matrix(path: impl AsRef<Path>, kind: TableKind, t: &Tensor) -> Result<()> {
    write(path.as_ref(), &encode_matrix(kind, t, VERSION_F32)?)
}

pub fn load_matrix(path: impl AsRef<Path>, kind: TableKind) -> Result<Tensor> {
    let path = path.as_ref();
    decode_matrix(&read(path)?, kind, &path.display().to_string())
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    write(path.as_ref(), &encode_labels(labels)?)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    decode_labels(&read(path)?, &path.display().to_string())
}
