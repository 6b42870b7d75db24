//! Little-endian binary readers/writers for persisted artifacts.
//!
//! Every artifact starts with a 4-byte magic and a u32 version so stale or
//! foreign files fail fast instead of decoding garbage.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f32_slice<W: Write>(w: &mut W, vs: &[f32]) -> std::io::Result<()> {
    write_u64(w, vs.len() as u64)?;
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

pub(crate) struct ArtifactReader<'p, R> {
    inner: R,
    path: &'p Path,
}

impl<'p, R: Read> ArtifactReader<'p, R> {
    pub fn new(inner: R, path: &'p Path) -> Self {
        ArtifactReader { inner, path }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::io(self.path, e))
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let mut got = [0u8; 4];
        self.fill(&mut got)?;
        if &got != magic {
            return Err(Error::artifact(self.path, format!("bad magic {got:?}, expected {magic:?}")));
        }
        let got_version = self.read_u32()?;
        if got_version != version {
            return Err(Error::artifact(
                self.path,
                format!("unsupported version {got_version}, expected {version}"),
            ));
        }
        Ok(())
    }

    pub fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn read_len(&mut self, what: &str) -> Result<usize> {
        let v = self.read_u64()?;
        usize::try_from(v)
            .map_err(|_| Error::artifact(self.path, format!("{what} length {v} overflows usize")))
    }

    pub fn read_f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn read_f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn read_f32_vec(&mut self, what: &str) -> Result<Vec<f32>> {
        let len = self.read_len(what)?;
        let mut out = Vec::with_capacity(len);
        let mut b = [0u8; 4];
        for _ in 0..len {
            self.fill(&mut b)?;
            out.push(f32::from_le_bytes(b));
        }
        Ok(out)
    }

    pub fn read_string(&mut self, what: &str) -> Result<String> {
        let len = self.read_len(what)?;
        let mut buf = vec![0u8; len];
        self.fill(&mut buf)?;
        String::from_utf8(buf)
            .map_err(|_| Error::artifact(self.path, format!("{what} is not valid UTF-8")))
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::artifact(self.path, "trailing bytes after artifact body")),
            Err(e) => Err(Error::io(self.path, e)),
        }
    }
}
