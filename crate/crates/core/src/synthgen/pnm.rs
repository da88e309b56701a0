//! Binary PPM (P6) frames and PGM (P5) label masks, maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Grid;

pub type RgbImage = Grid<[u8; 3]>;

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(img.len() * 3);
    for px in img.cells() {
        out.extend_from_slice(px);
    }
    out
}

pub fn encode_pgm(mask: &Grid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.cells());
    out
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, mask: &Grid<u8>) -> Result<()> {
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn read_pgm(path: &Path) -> Result<Grid<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let (w, h, data) = parse(bytes, b"P6", 3, path)?;
    let cells = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Grid::from_vec(h, w, cells).map_err(|e| Error::parse(path, None, e.to_string()))
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Grid<u8>> {
    let (w, h, data) = parse(bytes, b"P5", 1, path)?;
    Grid::from_vec(h, w, data.to_vec()).map_err(|e| Error::parse(path, None, e.to_string()))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Header<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, Some(self.pos as u64), msg)
    }

    fn skip_space_and_comments(&mut self) {
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
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("invalid {what}")))
    }
}

fn parse<'a>(bytes: &'a [u8], magic: &[u8; 2], channels: usize, path: &'a Path) -> Result<(usize, usize, &'a [u8])> {
    let mut hdr = Header { bytes, pos: 0, path };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(hdr.err(format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    hdr.pos = 2;
    let w = hdr.number("width")?;
    let h = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(hdr.err("zero image dimension"));
    }
    if maxval != 255 {
        return Err(hdr.err(format!("unsupported maxval {maxval}")));
    }
    match bytes.get(hdr.pos) {
        Some(c) if c.is_ascii_whitespace() => hdr.pos += 1,
        _ => return Err(hdr.err("expected single whitespace before raster")),
    }
    let need = w * h * channels;
    let data = &bytes[hdr.pos..];
    if data.len() < need {
        return Err(Error::parse(
            path,
            Some(bytes.len() as u64),
            format!("truncated raster: {} of {need} bytes", data.len()),
        ));
    }
    if data.len() > need {
        return Err(Error::parse(
            path,
            Some((hdr.pos + need) as u64),
            format!("{} trailing bytes after raster", data.len() - need),
        ));
    }
    Ok((w, h, data))
}
