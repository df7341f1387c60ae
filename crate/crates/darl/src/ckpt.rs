//! Binary checkpoint container: an 8-byte magic, a u32 format version, a u32
//! dimension header, then f64 arrays in declared field order. All integers
//! and floats are little-endian. Loading validates magic, version, header
//! length, array sizes, and that no trailing bytes remain.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn save(
    path: &Path,
    magic: &[u8; 8],
    version: u32,
    dims: &[u32],
    arrays: &[&[f64]],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for arr in arrays {
        buf.extend_from_slice(&(arr.len() as u64).to_le_bytes());
        for v in *arr {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug)]
pub(crate) struct Loaded {
    pub dims: Vec<u32>,
    pub arrays: Vec<Vec<f64>>,
}

pub(crate) fn load(
    path: &Path,
    magic: &[u8; 8],
    version: u32,
    n_arrays: usize,
) -> Result<Loaded> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cursor = Cursor { bytes: &bytes, pos: 0, path };

    let got_magic = cursor.take(8)?;
    if got_magic != magic {
        return Err(Error::format(path, format!("bad magic {got_magic:?}")));
    }
    let got_version = cursor.u32()?;
    if got_version != version {
        return Err(Error::format(
            path,
            format!("unsupported format version {got_version} (expected {version})"),
        ));
    }
    let n_dims = cursor.u32()? as usize;
    if n_dims > 64 {
        return Err(Error::format(path, format!("implausible dim count {n_dims}")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(cursor.u32()?);
    }
    let mut arrays = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let len = cursor.u64()? as usize;
        let raw = cursor.take(len * 8)?;
        let mut arr = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(8) {
            arr.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        arrays.push(arr);
    }
    if cursor.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after last array", bytes.len() - cursor.pos),
        ));
    }
    Ok(Loaded { dims, arrays })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
