//! RTF tensor container.
//!
//! Layout: the magic bytes `RTF1`, a little-endian `u32` header length, a
//! UTF-8 JSON header `{"dtype":"f32"|"f64","shape":[..],"name":".."}`, then
//! the raw little-endian values in row-major order. A file may hold several
//! records back to back; readers stop at end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RTF1";

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    name: String,
}

/// A tensor read back with its stored precision.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    /// Converts to the requested precision (exact when it matches the stored one).
    pub fn into_tensor<S: Scalar>(self) -> Tensor<S> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: StoredTensor,
}

pub fn encode<S: Scalar>(name: &str, t: &Tensor<S>) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        dtype: S::DTYPE.to_string(),
        shape: t.shape().to_vec(),
        name: name.to_string(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + t.len() * S::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn write_record<S: Scalar, W: Write>(w: &mut W, name: &str, t: &Tensor<S>) -> Result<()> {
    w.write_all(&encode(name, t))?;
    Ok(())
}

fn read_values<S: Scalar, R: Read>(r: &mut R, shape: Vec<usize>) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * S::BYTES];
    r.read_exact(&mut buf)
        .map_err(|e| TensorError::Format(format!("truncated payload: {e}")))?;
    let data = buf.chunks_exact(S::BYTES).map(S::read_le).collect();
    Tensor::new(shape, data)
}

/// Reads the next record, or `None` at a clean end of stream.
pub fn read_record<R: Read>(r: &mut R) -> Result<Option<Record>> {
    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|e| TensorError::Format(format!("truncated header length: {e}")))?;
    let len = u32::from_le_bytes(len) as usize;
    let mut hbuf = vec![0u8; len];
    r.read_exact(&mut hbuf)
        .map_err(|e| TensorError::Format(format!("truncated header: {e}")))?;
    let header: Header = serde_json::from_slice(&hbuf)
        .map_err(|e| TensorError::Format(format!("bad header: {e}")))?;
    let tensor = match header.dtype.as_str() {
        "f32" => StoredTensor::F32(read_values(r, header.shape)?),
        "f64" => StoredTensor::F64(read_values(r, header.shape)?),
        other => return Err(TensorError::Format(format!("unknown dtype {other:?}"))),
    };
    Ok(Some(Record {
        name: header.name,
        tensor,
    }))
}

pub fn save<S: Scalar>(path: impl AsRef<Path>, name: &str, t: &Tensor<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_record(&mut w, name, t)?;
    w.flush()?;
    Ok(())
}

/// Writes several named tensors into one file.
pub fn save_all<'a, S: Scalar + 'a>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = (&'a str, &'a Tensor<S>)>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (name, t) in items {
        write_record(&mut w, name, t)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads the first record of a file, converted to `S`.
pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<(String, Tensor<S>)> {
    let mut r = BufReader::new(File::open(path)?);
    let rec = read_record(&mut r)?.ok_or_else(|| TensorError::Format("empty file".into()))?;
    Ok((rec.name, rec.tensor.into_tensor()))
}

pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(rec) = read_record(&mut r)? {
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::from_vec(vec![1.0, -2.0]);
        let bytes = encode("x", &t);
        let header = br#"{"dtype":"f32","shape":[2],"name":"x"}"#;
        assert_eq!(&bytes[..4], b"RTF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, header.len());
        assert_eq!(&bytes[8..8 + header.len()], header);
        assert_eq!(&bytes[8 + header.len()..], &[0, 0, 128, 63, 0, 0, 0, 192]);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = encode("x", &Tensor::<f64>::ones([3]));
        bytes[0] = b'X';
        assert!(matches!(
            read_record(&mut bytes.as_slice()),
            Err(TensorError::Format(_))
        ));
    }

    #[test]
    fn multi_record_stream() {
        let a = Tensor::<f64>::from_fn([2, 2], |i| i as f64);
        let b = Tensor::<f32>::ones([3]);
        let mut buf = encode("a", &a);
        buf.extend(encode("b", &b));
        let mut r = buf.as_slice();
        let ra = read_record(&mut r).unwrap().unwrap();
        let rb = read_record(&mut r).unwrap().unwrap();
        assert!(read_record(&mut r).unwrap().is_none());
        assert_eq!(ra.tensor, StoredTensor::F64(a));
        assert_eq!(rb.name, "b");
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode("x", &Tensor::<f64>::ones([3]));
        assert!(read_record(&mut &bytes[..bytes.len() - 1]).is_err());
    }
}
