//! Binary container shared by checkpoints and dataset caches.
//!
//! ```text
//! magic        4 bytes
//! version      u16 LE
//! header_len   u32 LE, then header_len bytes of UTF-8 text
//! tensor_count u32 LE
//! per tensor:  name_len u16, name, dtype u8, rank u8, rank × u32 extents, offset u64
//! payload_len  u64 LE, then the payload (little-endian elements)
//! crc32        u32 LE over every preceding byte
//! ```

use thiserror::Error;

pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic number: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error(
        "truncated file: {what} needs {needed} bytes at offset {offset}, only {available} remain"
    )]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("inconsistent container: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorEntry {
    fn byte_len(&self) -> usize {
        self.data.len() * self.dtype.width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn encoded_len(header: &str, tensors: &[TensorEntry]) -> usize {
    let table: usize = tensors
        .iter()
        .map(|t| 2 + t.name.len() + 2 + 4 * t.shape.len() + 8)
        .sum();
    let payload: usize = tensors.iter().map(TensorEntry::byte_len).sum();
    4 + 2 + 4 + header.len() + 4 + table + 8 + payload + 4
}

pub fn encode(
    magic: &[u8; 4],
    header: &str,
    tensors: &[TensorEntry],
) -> Result<Vec<u8>, ContainerError> {
    let mut out = Vec::with_capacity(encoded_len(header, tensors));
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let header_len = u32::try_from(header.len())
        .map_err(|_| ContainerError::Inconsistent("header too long".into()))?;
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(ContainerError::Inconsistent(format!(
                "tensor `{}` shape {:?} does not match its data",
                t.name, t.shape
            )));
        }
        let name_len = u16::try_from(t.name.len())
            .map_err(|_| ContainerError::Inconsistent("tensor name too long".into()))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dtype as u8);
        out.push(t.shape.len() as u8);
        for &e in &t.shape {
            let e = u32::try_from(e)
                .map_err(|_| ContainerError::Inconsistent("extent exceeds u32".into()))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += t.byte_len() as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    for t in tensors {
        match t.dtype {
            DType::F32 => t
                .data
                .iter()
                .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => t
                .data
                .iter()
                .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ContainerError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ContainerError::Truncated {
                what,
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ContainerError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Structural parse first (so a short file reports truncation), then checksum,
/// then payload decoding.
pub fn decode(magic: &[u8; 4], bytes: &[u8]) -> Result<Container, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    let found = r.take(4, "magic")?;
    if found != magic {
        return Err(ContainerError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(ContainerError::UnsupportedVersion { found: version });
    }
    let header_len = r.u32("header length")? as usize;
    let header_bytes = r.take(header_len, "header")?;
    let count = r.u32("tensor count")? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = r.take(name_len, "tensor name")?;
        let tag = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let offset = r.u64("tensor offset")?;
        table.push((name, tag, shape, offset));
    }
    let payload_len = r.u64("payload length")? as usize;
    let payload_start = r.pos;
    r.take(payload_len, "payload")?;
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(ContainerError::Inconsistent(format!(
            "{} trailing bytes after checksum",
            bytes.len() - r.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(ContainerError::ChecksumMismatch { stored, computed });
    }

    let header = String::from_utf8(header_bytes.to_vec())
        .map_err(|_| ContainerError::Inconsistent("header is not UTF-8".into()))?;
    let payload = &bytes[payload_start..body_end];
    let mut expected_offset = 0usize;
    let mut tensors = Vec::with_capacity(table.len());
    for (name, tag, shape, offset) in table {
        let name = String::from_utf8(name.to_vec())
            .map_err(|_| ContainerError::Inconsistent("tensor name is not UTF-8".into()))?;
        let dtype = DType::from_tag(tag).ok_or_else(|| {
            ContainerError::Inconsistent(format!("tensor `{name}` has unknown dtype tag {tag}"))
        })?;
        if offset as usize != expected_offset {
            return Err(ContainerError::Inconsistent(format!(
                "tensor `{name}` starts at payload offset {offset}, expected {expected_offset}"
            )));
        }
        let len = shape.iter().product::<usize>() * dtype.width();
        let end = expected_offset + len;
        if end > payload.len() {
            return Err(ContainerError::Inconsistent(format!(
                "tensor `{name}` extends past the payload"
            )));
        }
        let raw = &payload[expected_offset..end];
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        tensors.push(TensorEntry {
            name,
            dtype,
            shape,
            data,
        });
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(ContainerError::Inconsistent(format!(
            "tensor table covers {expected_offset} payload bytes, payload holds {}",
            payload.len()
        )));
    }
    Ok(Container { header, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TensorEntry> {
        vec![
            TensorEntry {
                name: "a".into(),
                dtype: DType::F32,
                shape: vec![2, 2],
                data: vec![1.0, 2.0, -0.5, 3.25],
            },
            TensorEntry {
                name: "b".into(),
                dtype: DType::F64,
                shape: vec![1],
                data: vec![0.1],
            },
        ]
    }

    #[test]
    fn round_trip() {
        let bytes = encode(b"TEST", "hello", &sample()).unwrap();
        assert_eq!(bytes.len(), encoded_len("hello", &sample()));
        let c = decode(b"TEST", &bytes).unwrap();
        assert_eq!(c.header, "hello");
        assert_eq!(c.tensors, sample());
    }

    #[test]
    fn every_truncation_is_reported() {
        let bytes = encode(b"TEST", "hello", &sample()).unwrap();
        for len in 4..bytes.len() {
            let err = decode(b"TEST", &bytes[..len]).unwrap_err();
            assert!(
                matches!(err, ContainerError::Truncated { .. }),
                "len {len}: {err}"
            );
        }
    }

    #[test]
    fn distinct_errors() {
        let mut bytes = encode(b"TEST", "hello", &sample()).unwrap();
        assert!(matches!(
            decode(b"ABCD", &bytes),
            Err(ContainerError::BadMagic { .. })
        ));
        let n = bytes.len();
        bytes[n - 8] ^= 0x40;
        assert!(matches!(
            decode(b"TEST", &bytes),
            Err(ContainerError::ChecksumMismatch { .. })
        ));
        let mut v = encode(b"TEST", "hello", &sample()).unwrap();
        v[4] = 9;
        assert!(matches!(
            decode(b"TEST", &v),
            Err(ContainerError::UnsupportedVersion { found: 9 })
        ));
    }
}
