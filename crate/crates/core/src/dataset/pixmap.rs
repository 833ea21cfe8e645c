//! Binary portable pixmaps: P5 (gray) and P6 (RGB), 8-bit only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    /// Interleaved, row-major.
    pub data: Vec<u8>,
}

impl Pixmap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("pixmaps have 1 or 3 channels, not {channels}")));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} pixmap cannot hold {} bytes",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected {what} in header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| format!("{what} out of range"))
    }
}

/// Parses a P5/P6 byte stream; `path` is only used in error messages.
pub fn decode_pixmap(bytes: &[u8], path: &Path) -> Result<Pixmap> {
    let fail = |msg: String| Error::format(path, msg);
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(fail("bad magic, expected P5 or P6".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width").map_err(fail)?;
    let height = h.number("height").map_err(fail)?;
    let maxval = h.number("maxval").map_err(fail)?;
    if maxval != 255 {
        return Err(fail(format!("unsupported maxval {maxval}, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(fail(format!("empty image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fail("missing whitespace after maxval".into()));
    }
    let start = h.pos + 1;
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| fail(format!("dimensions {width}x{height} overflow")))?;
    let data = bytes
        .get(start..start + len)
        .ok_or_else(|| fail(format!("truncated payload: need {len} bytes, have {}", bytes.len() - start)))?;
    Pixmap::new(width, height, channels, data.to_vec())
}

pub fn encode_pixmap(img: &Pixmap) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn load_pixmap(path: &Path) -> Result<Pixmap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pixmap(&bytes, path)
}

pub fn save_pixmap(img: &Pixmap, path: &Path) -> Result<()> {
    fs::write(path, encode_pixmap(img)).map_err(|e| Error::io(path, e))
}
