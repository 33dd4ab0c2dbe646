//! Versioned binary parameter files.
//!
//! Layout (little endian): magic `PDMLPRM1`, u32 version, u32 kind length +
//! UTF-8 kind, u32 tensor count, then per tensor u32 rank, u64 dims, f64 data.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"PDMLPRM1";
const VERSION: u32 = 1;

pub fn to_bytes(kind: &str, tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind.len() as u32).to_le_bytes());
    out.extend_from_slice(kind.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated parameter file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Returns the stored kind tag and tensors.
pub fn from_bytes(buf: &[u8]) -> Result<(String, Vec<Tensor>)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format("bad magic; not a parameter file".into()));
    }
    let v = c.u32()?;
    if v != VERSION {
        return Err(Error::Format(format!("unsupported parameter file version {}", v)));
    }
    let klen = c.u32()? as usize;
    let kind = String::from_utf8(c.take(klen)?.to_vec()).map_err(|_| Error::Format("kind is not UTF-8".into()))?;
    let n = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let rank = c.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| c.f64()).collect::<Result<_>>()?;
        tensors.push(Tensor::new(shape, data)?);
    }
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes in parameter file".into()));
    }
    Ok((kind, tensors))
}

pub fn write_params(path: &Path, kind: &str, tensors: &[Tensor]) -> Result<()> {
    std::fs::write(path, to_bytes(kind, tensors))?;
    Ok(())
}

pub fn read_params(path: &Path, expected_kind: &str) -> Result<Vec<Tensor>> {
    let (kind, t) = from_bytes(&std::fs::read(path)?)?;
    if kind != expected_kind {
        return Err(Error::Format(format!("expected `{}` parameters, found `{}`", expected_kind, kind)));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let ts = vec![Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., -6.5]).unwrap(), Tensor::vector(vec![f64::MIN_POSITIVE])];
        let b = to_bytes("dae", &ts);
        let (k, back) = from_bytes(&b).unwrap();
        assert_eq!(k, "dae");
        assert_eq!(back, ts);
        assert!(from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
    }
}
