//! On-disk formats: the raw tensor container and the checkpoint file.
//!
//! Raw tensor container (one tensor per file):
//!   16-byte magic, u32 version, u8 dtype, u8 ndim, u32 dims, LE payload.
//!
//! Checkpoint (many named arrays):
//!   16-byte magic, u32 version, u32 header length, UTF-8 header with one
//!   "name dtype d0,d1,..." line per array, the payloads in header order,
//!   and a trailing CRC32 over everything before it.

use crate::error::{CoreError, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const TENSOR_MAGIC: &[u8; 16] = b"GHEAD.TENSOR\0\0\0\0";
pub const CKPT_MAGIC: &[u8; 16] = b"GHEAD.CKPT\0\0\0\0\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U32,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::U32 => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::U32),
            other => Err(CoreError::UnknownDtype(other)),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::U32 => "u32",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "f32" => Some(Dtype::F32),
            "f64" => Some(Dtype::F64),
            "u32" => Some(Dtype::U32),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
            ArrayData::U32(_) => Dtype::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::U32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::F32 => ArrayData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => ArrayData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::U32 => ArrayData::U32(
                bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f64(name: &str, shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: ArrayData::F64(data),
        }
    }

    pub fn u32(name: &str, shape: &[usize], data: Vec<u32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: ArrayData::U32(data),
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            ArrayData::F64(v) => Ok(v),
            other => Err(CoreError::MalformedHeader {
                path: self.name.clone(),
                detail: format!("expected f64 array, found {:?}", other.dtype()),
            }),
        }
    }

    pub fn as_u32(&self) -> Result<&[u32]> {
        match &self.data {
            ArrayData::U32(v) => Ok(v),
            other => Err(CoreError::MalformedHeader {
                path: self.name.clone(),
                detail: format!("expected u32 array, found {:?}", other.dtype()),
            }),
        }
    }
}

// ---- raw tensor container ----

pub fn write_tensor_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut buf = Vec::with_capacity(26 + data.len() * 4);
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(Dtype::F32.tag());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn read_tensor_f32(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let p = path.display().to_string();
    if bytes.len() < 22 {
        return Err(CoreError::Truncated { path: p });
    }
    if &bytes[0..16] != TENSOR_MAGIC {
        return Err(CoreError::BadMagic { path: p });
    }
    let version = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CoreError::VersionMismatch {
            path: p,
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dtype = Dtype::from_tag(bytes[20])?;
    if dtype != Dtype::F32 {
        return Err(CoreError::MalformedHeader {
            path: p,
            detail: format!("expected f32 tensor, found {}", dtype.name()),
        });
    }
    let ndim = bytes[21] as usize;
    let mut off = 22;
    if bytes.len() < off + ndim * 4 {
        return Err(CoreError::Truncated { path: p });
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
        off += 4;
    }
    let n: usize = shape.iter().product();
    if bytes.len() != off + n * 4 {
        return Err(CoreError::Truncated { path: p });
    }
    let data = bytes[off..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, data))
}

// ---- checkpoint ----

pub fn write_checkpoint(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    let mut header = String::new();
    for a in arrays {
        assert!(
            !a.name.contains(' ') && !a.name.contains('\n'),
            "array name {:?} contains separators",
            a.name
        );
        let dims: Vec<String> = a.shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!(
            "{} {} {}\n",
            a.name,
            a.data.dtype().name(),
            dims.join(",")
        ));
    }
    let header = header.into_bytes();
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for a in arrays {
        buf.extend_from_slice(&a.data.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    atomic_write(path, &buf)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedArray>> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let p = path.display().to_string();
    if bytes.len() < 28 {
        return Err(CoreError::Truncated { path: p });
    }
    if &bytes[0..16] != CKPT_MAGIC {
        return Err(CoreError::BadMagic { path: p });
    }
    let version = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CoreError::VersionMismatch {
            path: p,
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored_crc != computed {
        return Err(CoreError::ChecksumMismatch {
            path: p,
            stored: stored_crc,
            computed,
        });
    }
    let header_len = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    if bytes.len() < 24 + header_len + 4 {
        return Err(CoreError::Truncated { path: p });
    }
    let header = std::str::from_utf8(&bytes[24..24 + header_len]).map_err(|e| {
        CoreError::MalformedHeader {
            path: p.clone(),
            detail: e.to_string(),
        }
    })?;
    let mut arrays = Vec::new();
    let mut off = 24 + header_len;
    let payload_end = bytes.len() - 4;
    for line in header.lines() {
        let mut fields = line.split(' ');
        let (name, dtype, dims) = match (fields.next(), fields.next(), fields.next()) {
            (Some(n), Some(d), Some(s)) => (n, d, s),
            _ => {
                return Err(CoreError::MalformedHeader {
                    path: p,
                    detail: format!("bad line {line:?}"),
                })
            }
        };
        let dtype = Dtype::from_name(dtype).ok_or_else(|| CoreError::MalformedHeader {
            path: p.clone(),
            detail: format!("bad dtype in {line:?}"),
        })?;
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::MalformedHeader {
                path: p.clone(),
                detail: format!("bad shape in {line:?}: {e}"),
            })?;
        let n: usize = shape.iter().product();
        let nbytes = n * dtype.width();
        if off + nbytes > payload_end {
            return Err(CoreError::Truncated { path: p });
        }
        arrays.push(NamedArray {
            name: name.to_string(),
            shape,
            data: ArrayData::from_le_bytes(dtype, &bytes[off..off + nbytes]),
        });
        off += nbytes;
    }
    if off != payload_end {
        return Err(CoreError::Truncated { path: p });
    }
    Ok(arrays)
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CoreError::io(path, e))?;
        }
    }
    let tmp = path.with_extension("tmp.partial");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CoreError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arrays() -> Vec<NamedArray> {
        vec![
            NamedArray::f64("field.mu", &[2, 3], vec![0.1, -0.2, 0.3, 1.5e-7, 2.0, -3.25]),
            NamedArray::u32("meta.counts", &[2], vec![100, 20]),
            NamedArray::f64("net.w0", &[1], vec![std::f64::consts::PI]),
        ]
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("ghead_io_test_rt");
        let path = dir.join("a.ckpt");
        let input = arrays();
        write_checkpoint(&path, &input).unwrap();
        let output = read_checkpoint(&path).unwrap();
        assert_eq!(input, output);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let dir = std::env::temp_dir().join("ghead_io_test_magic");
        let path = dir.join("a.ckpt");
        write_checkpoint(&path, &arrays()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(CoreError::BadMagic { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let dir = std::env::temp_dir().join("ghead_io_test_crc");
        let path = dir.join("a.ckpt");
        write_checkpoint(&path, &arrays()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() - 12;
        bytes[mid] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(CoreError::ChecksumMismatch { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_file_is_reported() {
        let dir = std::env::temp_dir().join("ghead_io_test_trunc");
        let path = dir.join("a.ckpt");
        write_checkpoint(&path, &arrays()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let r = read_checkpoint(&path);
        assert!(
            matches!(r, Err(CoreError::Truncated { .. }))
                || matches!(r, Err(CoreError::ChecksumMismatch { .. })),
            "got {r:?}"
        );
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = std::env::temp_dir().join("ghead_io_test_ver");
        let path = dir.join("a.ckpt");
        write_checkpoint(&path, &arrays()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[16] = 99;
        // keep the checksum valid so the version check is what fires
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(CoreError::VersionMismatch { found: 99, .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tensor_container_round_trip() {
        let dir = std::env::temp_dir().join("ghead_io_test_tensor");
        let path = dir.join("sig.rt");
        let data: Vec<f32> = (0..24).map(|i| i as f32 * 0.5 - 3.0).collect();
        write_tensor_f32(&path, &[2, 3, 4], &data).unwrap();
        let (shape, back) = read_tensor_f32(&path).unwrap();
        assert_eq!(shape, vec![2, 3, 4]);
        assert_eq!(back, data);
        std::fs::remove_dir_all(&dir).ok();
    }
}
