//! Little-endian helpers shared by the checkpoint formats.

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::nn::Param;

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vals: &[f64]) {
        for &v in vals {
            self.f32(v as f32);
        }
    }

    /// `u32 rank, u32 dims..., f32 data`.
    pub fn tensor(&mut self, shape: &[usize], data: &[f64]) {
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u32(d as u32);
        }
        self.f32s(data);
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(Error::format(0, format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(LittleEndian::read_f32(self.take(4, what)?))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(start as u64, "size overflow"))?, what)?;
        let out: Vec<f64> = raw.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::format((start + 4 * i) as u64, format!("non-finite value in {what}")));
        }
        Ok(out)
    }

    pub fn tensor(&mut self, what: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let rank = self.u32(what)? as usize;
        if rank > 8 {
            return Err(Error::format(self.pos as u64 - 4, format!("implausible rank {rank} for {what}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(what)? as usize);
        }
        let n = shape.iter().product();
        let data = self.f32s(n, what)?;
        Ok((shape, data))
    }

    /// Reads a tensor and checks it against the expected parameter layout.
    pub fn param_into(&mut self, p: &mut Param) -> Result<()> {
        let at = self.pos;
        let (shape, data) = self.tensor(&p.name)?;
        if shape != p.shape {
            return Err(Error::format(at as u64, format!("{} has shape {shape:?}, expected {:?}", p.name, p.shape)));
        }
        p.data = data;
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(self.pos as u64, "trailing bytes"));
        }
        Ok(())
    }
}
