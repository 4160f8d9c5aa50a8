//! Binary greymap (P5, maxval 255) encoding.

use std::path::Path;

use crate::image::ImageGray;
use crate::{Error, Result};

/// `round(v * 255)` per pixel behind a `P5` header.
pub fn encode_pgm(img: &ImageGray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGray> {
    let mut h = Header { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(h.err("not a binary PGM (expected magic P5)"));
    }
    h.pos = 2;
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(h.err("zero image dimension"));
    }
    if maxval != 255 {
        return Err(h.err(format!("unsupported maxval {maxval}, expected 255")));
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(h.err("expected whitespace after maxval"));
    }
    h.pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| h.err("image dimensions overflow"))?;
    let payload = &bytes[h.pos..];
    if payload.len() < n {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("truncated payload: {} of {n} bytes", payload.len()),
        });
    }
    if payload.len() > n {
        return Err(Error::Parse {
            offset: h.pos + n,
            message: "trailing bytes after pixel data".into(),
        });
    }
    ImageGray::new(height, width, payload.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn save_pgm(img: &ImageGray, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: &Path) -> Result<ImageGray> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    decode_pgm(&bytes)
}
