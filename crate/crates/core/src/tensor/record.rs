//! Named tensor records, the unit of checkpoint and `.tns` media files.
//!
//! Layout per record: name length (u32 LE) + UTF-8 name, dtype byte
//! (0 = f32, 1 = f64), rank byte, extents as 8-byte little-endian unsigned,
//! then the raw little-endian element values.

use super::{Dtype, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NamedTensor<E: Element> {
    pub name: String,
    pub tensor: Tensor<E>,
}

pub fn write_named_tensor<E: Element>(out: &mut Vec<u8>, name: &str, t: &Tensor<E>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(E::DTYPE.code());
    out.push(t.shape().len() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Cursor-style reader used by checkpoint loading.
pub struct RecordReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> RecordReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        RecordReader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what}: need {n} bytes, have {}",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn read_u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn read_u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut buf = [0u8; 8];
        buf.copy_from_slice(b);
        Ok(u64::from_le_bytes(buf))
    }

    pub fn read_string(&mut self, what: &str) -> Result<String> {
        let len = self.read_u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint(format!("invalid UTF-8 in {what}")))
    }
}

pub fn read_named_tensor<E: Element>(r: &mut RecordReader) -> Result<NamedTensor<E>> {
    let name = r.read_string("tensor name")?;
    let dtype = Dtype::from_code(r.read_u8(&format!("dtype of '{name}'"))?)?;
    if dtype != E::DTYPE {
        return Err(Error::Checkpoint(format!(
            "tensor '{name}' has dtype {dtype:?}, expected {:?}",
            E::DTYPE
        )));
    }
    let rank = r.read_u8(&format!("rank of '{name}'"))? as usize;
    let mut shape = Vec::with_capacity(rank);
    for d in 0..rank {
        shape.push(r.read_u64(&format!("extent {d} of '{name}'"))? as usize);
    }
    let numel: usize = shape.iter().product();
    let bytes = r.take(numel * dtype.size(), &format!("values of '{name}'"))?;
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        data.push(E::read_le(&bytes[i * dtype.size()..]));
    }
    Ok(NamedTensor {
        name,
        tensor: Tensor::new(shape, data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_roundtrip() {
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.25, 0.0, -7.5]).unwrap();
        let mut buf = Vec::new();
        write_named_tensor(&mut buf, "w.q", &t);
        let mut r = RecordReader::new(&buf);
        let back = read_named_tensor::<f32>(&mut r).unwrap();
        assert_eq!(back.name, "w.q");
        assert!(back.tensor.bit_eq(&t));
        assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn truncated_record_errors() {
        let t = Tensor::<f64>::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_named_tensor(&mut buf, "x", &t);
        buf.truncate(buf.len() - 1);
        let mut r = RecordReader::new(&buf);
        let err = read_named_tensor::<f64>(&mut r).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn dtype_mismatch_is_named() {
        let t = Tensor::<f32>::new(vec![1], vec![1.0]).unwrap();
        let mut buf = Vec::new();
        write_named_tensor(&mut buf, "m", &t);
        let mut r = RecordReader::new(&buf);
        let err = read_named_tensor::<f64>(&mut r).unwrap_err();
        assert!(err.to_string().contains("'m'"));
    }
}
