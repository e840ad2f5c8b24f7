//! OCTF tensor file format.
//!
//! Layout: magic bytes `OCTF`, version u32 little-endian, dtype code u8
//! (0 = f32, 1 = f64), ndim u8, dims as u64 little-endian, then raw
//! little-endian values in row-major order. Used for checkpoints and
//! field data.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::element::{Dtype, Element};

pub const OCTF_MAGIC: [u8; 4] = *b"OCTF";
pub const OCTF_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum OctfError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not an OCTF file)")]
    BadMagic,
    #[error("unsupported OCTF version {0}")]
    BadVersion(u32),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("dtype mismatch: file holds {file:?}, caller expects {expected:?}")]
    DtypeMismatch { file: Dtype, expected: Dtype },
    #[error("file truncated while reading tensor payload")]
    Truncated,
}

pub fn write_octf_to<T: Element, W: Write>(w: &mut W, shape: &[usize], data: &[T]) -> Result<(), OctfError> {
    assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
    w.write_all(&OCTF_MAGIC)?;
    w.write_all(&OCTF_VERSION.to_le_bytes())?;
    w.write_all(&[T::DTYPE as u8, shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes_vec())?;
    }
    Ok(())
}

pub fn write_octf<T: Element>(path: &Path, shape: &[usize], data: &[T]) -> Result<(), OctfError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_octf_to(&mut w, shape, data)?;
    w.flush()?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<(Dtype, Vec<usize>), OctfError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != OCTF_MAGIC {
        return Err(OctfError::BadMagic);
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != OCTF_VERSION {
        return Err(OctfError::BadVersion(version));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let dtype = Dtype::from_code(head[0]).ok_or(OctfError::BadDtype(head[0]))?;
    let ndim = head[1] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut dim = [0u8; 8];
        r.read_exact(&mut dim)?;
        shape.push(u64::from_le_bytes(dim) as usize);
    }
    Ok((dtype, shape))
}

pub fn read_octf_from<T: Element, R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<T>), OctfError> {
    let (dtype, shape) = read_header(r)?;
    if dtype != T::DTYPE {
        return Err(OctfError::DtypeMismatch { file: dtype, expected: T::DTYPE });
    }
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * dtype.size_bytes()];
    r.read_exact(&mut bytes).map_err(|_| OctfError::Truncated)?;
    let mut data = Vec::with_capacity(n);
    match dtype {
        Dtype::F32 => {
            for c in bytes.chunks_exact(4) {
                data.push(T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
            }
        }
        Dtype::F64 => {
            for c in bytes.chunks_exact(8) {
                data.push(T::from_f64(f64::from_le_bytes([
                    c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                ])));
            }
        }
    }
    Ok((shape, data))
}

pub fn read_octf<T: Element>(path: &Path) -> Result<(Vec<usize>, Vec<T>), OctfError> {
    let mut r = BufReader::new(File::open(path)?);
    read_octf_from(&mut r)
}

/// Shape stored in a file without reading the payload.
pub fn read_octf_shape(path: &Path) -> Result<(Dtype, Vec<usize>), OctfError> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r)
}
