//! Little-endian binary reader/writer helpers for model files. Every model
//! file starts with a 4-byte magic and a u32 format version, followed by a
//! model-specific config echo and the flat f64 parameter blob.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn format_err(path: &str, why: impl Into<String>) -> Error {
    Error::ModelFormat {
        path: path.to_string(),
        why: why.into(),
    }
}

pub struct BinWriter<W: Write> {
    inner: W,
    path: String,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W, path: impl Into<String>) -> Self {
        BinWriter {
            inner,
            path: path.into(),
        }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::io(self.path.clone(), e))
    }

    pub fn magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        self.put(magic)?;
        self.u32(version)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f64_vec(&mut self, vs: &[f64]) -> Result<()> {
        self.u64(vs.len() as u64)?;
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }
}

pub struct BinReader<R: Read> {
    inner: R,
    path: String,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R, path: impl Into<String>) -> Self {
        BinReader {
            inner,
            path: path.into(),
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::io(self.path.clone(), e))?;
        Ok(buf)
    }

    pub fn magic(&mut self, expected: &[u8; 4], expected_version: u32) -> Result<()> {
        let got: [u8; 4] = self.take()?;
        if &got != expected {
            return Err(format_err(&self.path, "bad magic"));
        }
        let version = self.u32()?;
        if version != expected_version {
            return Err(format_err(
                &self.path,
                format!("unsupported version {version} (expected {expected_version})"),
            ));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > 1 << 28 {
            return Err(format_err(&self.path, "unreasonable vector length"));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub fn path(&self) -> &str {
        &self.path
    }
}
