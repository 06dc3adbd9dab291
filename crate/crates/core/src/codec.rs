//! Little-endian byte helpers shared by the binary container formats.

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("value exceeds u32 container field"));
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedPayload)?;
        if end > self.buf.len() {
            return Err(Error::TruncatedPayload);
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    /// Checks a 4-byte magic tag. An empty or short stream is truncated, a
    /// wrong tag is bad magic.
    pub fn magic(&mut self, tag: &[u8; 4]) -> Result<()> {
        if self.take(4)? != tag {
            return Err(Error::BadMagic);
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        // Guard the allocation against a corrupt length field.
        if n.saturating_mul(8) > self.remaining() {
            return Err(Error::TruncatedPayload);
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Line tokenizer for the text container forms. Floats are written with
/// `{:?}` (shortest round-trip representation) so parsing restores the
/// exact bits.
pub(crate) struct TextReader<'a> {
    lines: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> TextReader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().peekable(),
        }
    }

    /// Next non-empty line split on whitespace, with its first token checked.
    pub fn record(&mut self, key: &str) -> Result<Vec<&'a str>> {
        loop {
            let line = self.lines.next().ok_or(Error::TruncatedPayload)?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut toks: Vec<&str> = line.split_whitespace().collect();
            if toks[0] != key {
                return Err(Error::Parse(format!("expected `{key}`, found `{}`", toks[0])));
            }
            toks.remove(0);
            return Ok(toks);
        }
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(tok: &str) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| Error::Parse(format!("bad number `{tok}`")))
}

pub(crate) fn parse_all<T: std::str::FromStr>(toks: &[&str]) -> Result<Vec<T>> {
    toks.iter().map(|t| parse_num(t)).collect()
}

pub(crate) fn fmt_f64s(vs: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in vs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format!("{v:?}"));
    }
    s
}
