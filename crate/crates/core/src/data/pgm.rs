//! NetPBM greymaps: `P2` (ASCII) and `P5` (binary), `maxval` up to 65535.
//! Binary samples are one byte when `maxval < 256`, else two bytes
//! big-endian.

use std::path::Path;

use crate::error::{MewError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples, each `<= maxval`.
    pub data: Vec<u16>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmFormat {
    Ascii,
    Binary,
}

fn perr(offset: usize, message: impl Into<String>) -> MewError {
    MewError::Pgm {
        offset,
        message: message.into(),
    }
}

impl PgmImage {
    pub fn new(width: usize, height: usize, maxval: u16, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || maxval == 0 || data.len() != width * height {
            return Err(MewError::InvalidArgument(format!(
                "PGM {width}x{height} maxval {maxval} with {} samples",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > maxval) {
            return Err(MewError::InvalidArgument(format!("sample {v} exceeds maxval {maxval}")));
        }
        Ok(Self {
            width,
            height,
            maxval,
            data,
        })
    }

    pub fn parse(buf: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf, pos: 0 };
        let magic = cur.bytes(2).ok_or_else(|| perr(0, "missing magic number"))?;
        let format = match magic {
            b"P2" => PgmFormat::Ascii,
            b"P5" => PgmFormat::Binary,
            _ => return Err(perr(0, "expected magic P2 or P5")),
        };
        let width = cur.header_number("width")?;
        let height = cur.header_number("height")?;
        let maxval = cur.header_number("maxval")?;
        if width == 0 || height == 0 {
            return Err(perr(cur.pos, "zero image extent"));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(perr(cur.pos, format!("maxval {maxval} outside 1..=65535")));
        }
        let maxval = maxval as u16;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| perr(cur.pos, "image extent overflows"))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        match format {
            PgmFormat::Binary => {
                let at = cur.pos;
                if !cur.buf.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
                    return Err(perr(at, "expected single whitespace before raster"));
                }
                cur.pos += 1;
                let wide = maxval > 255;
                let bytes = n * if wide { 2 } else { 1 };
                let raster = cur
                    .bytes(bytes)
                    .ok_or_else(|| perr(buf.len(), format!("truncated raster: need {bytes} bytes after offset {}", at + 1)))?;
                if wide {
                    data.extend(raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])));
                } else {
                    data.extend(raster.iter().map(|&b| b as u16));
                }
                if let Some(i) = data.iter().position(|&v| v > maxval) {
                    let off = at + 1 + i * if wide { 2 } else { 1 };
                    return Err(perr(off, format!("sample {} exceeds maxval {maxval}", data[i])));
                }
            }
            PgmFormat::Ascii => {
                for _ in 0..n {
                    cur.skip_space(false);
                    let at = cur.pos;
                    let v = cur
                        .number()
                        .ok_or_else(|| perr(at, "truncated or malformed ASCII raster"))?;
                    if v > maxval as usize {
                        return Err(perr(at, format!("sample {v} exceeds maxval {maxval}")));
                    }
                    data.push(v as u16);
                }
            }
        }
        Ok(Self {
            width,
            height,
            maxval,
            data,
        })
    }

    pub fn to_bytes(&self, format: PgmFormat) -> Vec<u8> {
        let magic = match format {
            PgmFormat::Ascii => "P2",
            PgmFormat::Binary => "P5",
        };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        match format {
            PgmFormat::Binary if self.maxval > 255 => {
                for &v in &self.data {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
            PgmFormat::Binary => out.extend(self.data.iter().map(|&v| v as u8)),
            PgmFormat::Ascii => {
                for row in self.data.chunks(self.width) {
                    let line: Vec<String> = row.iter().map(u16::to_string).collect();
                    out.extend_from_slice(line.join(" ").as_bytes());
                    out.push(b'\n');
                }
            }
        }
        out
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn skip_space(&mut self, comments: bool) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if comments && b == b'#' {
                while self.buf.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        let start = self.pos;
        let mut v: usize = 0;
        while let Some(&b) = self.buf.get(self.pos).filter(|b| b.is_ascii_digit()) {
            v = v.checked_mul(10)?.checked_add((b - b'0') as usize)?;
            self.pos += 1;
        }
        (self.pos > start).then_some(v)
    }

    fn header_number(&mut self, what: &str) -> Result<usize> {
        self.skip_space(true);
        let at = self.pos;
        self.number()
            .ok_or_else(|| perr(at, format!("expected {what}")))
    }
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<PgmImage> {
    PgmImage::parse(&std::fs::read(path)?)
}

/// Writes binary `P5`.
pub fn save_pgm(img: &PgmImage, path: impl AsRef<Path>) -> Result<()> {
    save_pgm_as(img, path, PgmFormat::Binary)
}

pub fn save_pgm_as(img: &PgmImage, path: impl AsRef<Path>, format: PgmFormat) -> Result<()> {
    std::fs::write(path, img.to_bytes(format))?;
    Ok(())
}
