//! Little-endian binary encoding used by genome and checkpoint files.

use std::io::{self, Read, Write};

pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u128(&mut self, v: u128) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn len(&mut self, n: usize) -> io::Result<()> {
        self.u64(n as u64)
    }

    /// Length-prefixed slice.
    pub fn f64s(&mut self, v: &[f64]) -> io::Result<()> {
        self.len(v.len())?;
        self.raw_f64s(v)
    }

    pub fn raw_f64s(&mut self, v: &[f64]) -> io::Result<()> {
        let mut buf = Vec::with_capacity(v.len().min(1 << 16) * 8);
        for chunk in v.chunks(1 << 16) {
            buf.clear();
            for x in chunk {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            self.inner.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> io::Result<()> {
        self.len(s.len())?;
        self.inner.write_all(s.as_bytes())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub struct BinReader<R: Read> {
    inner: R,
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    pub fn array<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    pub fn expect(&mut self, magic: &[u8]) -> io::Result<()> {
        let mut b = vec![0u8; magic.len()];
        self.inner.read_exact(&mut b)?;
        if b != magic {
            return Err(invalid(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&b)
            )));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn u128(&mut self) -> io::Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Reads a length prefix, refusing anything above `max`.
    pub fn len(&mut self, max: usize) -> io::Result<usize> {
        let n = self.u64()?;
        if n > max as u64 {
            return Err(invalid(format!("length {n} exceeds limit {max}")));
        }
        Ok(n as usize)
    }

    pub fn f64s(&mut self, max: usize) -> io::Result<Vec<f64>> {
        let n = self.len(max)?;
        self.raw_f64s(n)
    }

    pub fn raw_f64s(&mut self, n: usize) -> io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = vec![0u8; n.min(1 << 16) * 8];
        let mut left = n;
        while left > 0 {
            let take = left.min(1 << 16);
            let chunk = &mut buf[..take * 8];
            self.inner.read_exact(chunk)?;
            out.extend(chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())));
            left -= take;
        }
        Ok(out)
    }

    pub fn str(&mut self, max: usize) -> io::Result<String> {
        let n = self.len(max)?;
        let mut b = vec![0u8; n];
        self.inner.read_exact(&mut b)?;
        String::from_utf8(b).map_err(|e| invalid(e.to_string()))
    }

    /// Succeeds only if no bytes remain.
    pub fn finish(mut self) -> io::Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(invalid("trailing bytes after payload".into())),
        }
    }
}
