//! Tensor container files.
//!
//! Layout: the 8-byte magic `SWTENSR0`, a little-endian `u64` header length,
//! a UTF-8 JSON header `{"dtype":"f32"|"f64","shape":[...]}` and then the raw
//! little-endian row-major payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Array, DType, Scalar};

pub const MAGIC: &[u8; 8] = b"SWTENSR0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
}

/// A decoded tensor of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyArray {
    F32(Array<f32>),
    F64(Array<f64>),
}

impl AnyArray {
    pub fn dtype(&self) -> DType {
        match self {
            AnyArray::F32(_) => DType::F32,
            AnyArray::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyArray::F32(a) => a.shape(),
            AnyArray::F64(a) => a.shape(),
        }
    }

    /// Converts to the requested precision.
    pub fn into_array<T: Scalar>(self) -> Array<T> {
        match self {
            AnyArray::F32(a) => a.cast(),
            AnyArray::F64(a) => a.cast(),
        }
    }
}

pub fn encode<T: Scalar>(array: &Array<T>) -> Vec<u8> {
    let header = serde_json::to_vec(&TensorHeader {
        dtype: T::DTYPE,
        shape: array.shape().to_vec(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + array.len() * T::DTYPE.size_of());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for &v in array.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyArray> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("tensor container: bad magic".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format("tensor container: truncated header".into()))?;
    let header: TensorHeader = serde_json::from_slice(&bytes[16..body])?;
    let count: usize = header.shape.iter().product();
    let payload = &bytes[body..];
    if payload.len() != count * header.dtype.size_of() {
        return Err(Error::Format(format!(
            "tensor container: payload has {} bytes, expected {}",
            payload.len(),
            count * header.dtype.size_of()
        )));
    }
    Ok(match header.dtype {
        DType::F32 => AnyArray::F32(read_payload(&header.shape, payload)?),
        DType::F64 => AnyArray::F64(read_payload(&header.shape, payload)?),
    })
}

fn read_payload<T: Scalar>(shape: &[usize], payload: &[u8]) -> Result<Array<T>> {
    let size = T::DTYPE.size_of();
    let data = payload.chunks_exact(size).map(T::read_le).collect();
    Array::from_vec(shape, data)
}

pub fn write_file<T: Scalar>(path: &Path, array: &Array<T>) -> Result<()> {
    write_atomic(path, &encode(array))
}

pub fn read_file(path: &Path) -> Result<AnyArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn layout_is_pinned() {
        let a = Array::<f32>::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&a);
        assert_eq!(&bytes[..8], b"SWTENSR0");
        let header = br#"{"dtype":"f32","shape":[2]}"#;
        assert_eq!(&bytes[8..16], &(header.len() as u64).to_le_bytes());
        assert_eq!(&bytes[16..16 + header.len()], header);
        assert_eq!(&bytes[16 + header.len()..], &[0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0]);
    }

    #[test]
    fn rejects_corruption() {
        let a = Array::<f64>::zeros(&[3]);
        let mut bytes = encode(&a);
        bytes.pop();
        assert!(decode(&bytes).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
        let extra = br#"{"dtype":"f64","shape":[1],"x":1}"#;
        let mut bad = MAGIC.to_vec();
        bad.extend_from_slice(&(extra.len() as u64).to_le_bytes());
        bad.extend_from_slice(extra);
        bad.extend_from_slice(&[0; 8]);
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.swt");
        let a: Array<f64> = Rng::new(1).normal_array(&[2, 3, 4], 1.0);
        write_file(&path, &a).unwrap();
        assert_eq!(read_file(&path).unwrap(), AnyArray::F64(a));
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(bits in prop::collection::vec(any::<u32>(), 0..40), rows in 1usize..4) {
            let cols = bits.len() / rows;
            let data: Vec<f32> = bits[..rows * cols].iter().map(|&b| f32::from_bits(b)).collect();
            let a = Array::from_vec(&[rows, cols], data).unwrap();
            match decode(&encode(&a)).unwrap() {
                AnyArray::F32(b) => {
                    let x: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
                    let y: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(x, y);
                    prop_assert_eq!(a.shape(), b.shape());
                }
                AnyArray::F64(_) => prop_assert!(false),
            }
        }
    }
}
