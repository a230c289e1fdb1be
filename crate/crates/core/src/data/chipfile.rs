//! Binary chip container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `LFCP` |
//! | 2 | version (1) |
//! | 1 | dtype (1 = f32 LE) |
//! | 1 | reserved, zero |
//! | 4 x 3 | channels, height, width |
//! | per channel | u16 label length + UTF-8 label |
//! | C*H*W*4 | payload, channel-major row-major |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ImageChip;

pub const CHIP_MAGIC: [u8; 4] = *b"LFCP";
pub const CHIP_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

pub fn encode_chip(chip: &ImageChip) -> Vec<u8> {
    let (c, h, w) = chip.shape();
    let mut out = Vec::with_capacity(20 + c * (h * w * 4 + 8));
    out.extend_from_slice(&CHIP_MAGIC);
    out.extend_from_slice(&CHIP_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(0);
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for label in chip.labels() {
        out.extend_from_slice(&(label.len() as u16).to_le_bytes());
        out.extend_from_slice(label.as_bytes());
    }
    for v in chip.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) struct Cursor<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
    pub(crate) what: &'static str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::Parse(format!(
                "{}: header truncated at byte {} (needed {n} more, {remaining} left)",
                self.what, self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Parse(format!("{}: label is not UTF-8", self.what)))
    }

    /// Reads `count` f32 values after checking the exact byte budget.
    pub(crate) fn f32_payload(&mut self, count: usize, exact: bool) -> Result<Vec<f32>> {
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| Error::Parse(format!("{}: payload size overflows", self.what)))?;
        let actual = self.remaining();
        if actual < expected || (exact && actual != expected) {
            return Err(Error::Parse(format!(
                "{}: payload has {actual} bytes, expected {expected}",
                self.what
            )));
        }
        let raw = self.take(expected)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_chip(bytes: &[u8]) -> Result<ImageChip> {
    let mut cur = Cursor::new(bytes, "chip file");
    if cur.take(4)? != CHIP_MAGIC {
        return Err(Error::Parse("chip file: bad magic".into()));
    }
    let version = cur.u16()?;
    if version != CHIP_VERSION {
        return Err(Error::Parse(format!("chip file: unsupported version {version}")));
    }
    let dtype = cur.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Parse(format!("chip file: unsupported dtype {dtype}")));
    }
    cur.u8()?;
    let (c, h, w) = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Parse(format!("chip file: degenerate shape {c}x{h}x{w}")));
    }
    let labels = (0..c).map(|_| cur.string()).collect::<Result<Vec<_>>>()?;
    let count = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Parse("chip file: shape overflows".into()))?;
    let data = cur.f32_payload(count, true)?;
    ImageChip::new(labels, h, w, data)
}

pub fn write_chip(path: impl AsRef<Path>, chip: &ImageChip) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_chip(chip)).map_err(|e| Error::io(path, e))
}

pub fn read_chip(path: impl AsRef<Path>) -> Result<ImageChip> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_chip(&bytes).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}
