//! Netpbm PGM reader/writer (P2 ascii, P5 binary), maxval up to 255.
//!
//! Comment lines (`#` to end of line) are tolerated wherever header
//! whitespace is allowed. Written files always use maxval 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmMode {
    Ascii,
    Binary,
}

struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderScanner<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<u32> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::MalformedHeader(format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::MalformedHeader(format!("non-ascii {what}")))?;
        text.parse::<u32>()
            .map_err(|_| Error::MalformedHeader(format!("{what} out of range: {text}")))
    }
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 {
        return Err(Error::MalformedHeader("file shorter than magic".into()));
    }
    let binary = match &bytes[..2] {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(Error::MalformedHeader(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut scanner = HeaderScanner::new(&bytes[2..]);
    let width = scanner.next_uint("width")? as usize;
    let height = scanner.next_uint("height")? as usize;
    let maxval = scanner.next_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!(
            "degenerate dimensions {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    let expected = width * height;

    let data = if binary {
        // exactly one separator byte between maxval and the raster
        let offset = 2 + scanner.pos + 1;
        if offset > bytes.len() {
            return Err(Error::TruncatedPayload { expected, found: 0 });
        }
        let raster = &bytes[offset..];
        if raster.len() < expected {
            return Err(Error::TruncatedPayload { expected, found: raster.len() });
        }
        raster[..expected].iter().map(|&b| b as f64).collect::<Vec<_>>()
    } else {
        let mut data = Vec::with_capacity(expected);
        while data.len() < expected {
            scanner.skip_separators();
            if scanner.pos >= scanner.bytes.len() {
                return Err(Error::TruncatedPayload { expected, found: data.len() });
            }
            data.push(scanner.next_uint("pixel value")? as f64);
        }
        data
    };
    if let Some(&v) = data.iter().find(|&&v| v > maxval as f64) {
        return Err(Error::CorruptPayload(format!(
            "pixel value {v} exceeds maxval {maxval}"
        )));
    }
    GrayImage::from_vec(width, height, data)
}

/// Write `img` as PGM with maxval 255. Pixel values must round into
/// [0, 255]; rescale first if they do not.
pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>, mode: PgmMode) -> Result<()> {
    let bytes = encode_pgm(img, mode)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn encode_pgm(img: &GrayImage, mode: PgmMode) -> Result<Vec<u8>> {
    let mut quantized = Vec::with_capacity(img.pixel_count());
    for &v in img.data() {
        let r = v.round();
        if !(0.0..=255.0).contains(&r) {
            return Err(Error::PixelOutOfRange(v));
        }
        quantized.push(r as u8);
    }
    let mut out = Vec::new();
    match mode {
        PgmMode::Binary => {
            out.extend_from_slice(format!("P5\n{} {}\n255\n", img.width(), img.height()).as_bytes());
            out.extend_from_slice(&quantized);
        }
        PgmMode::Ascii => {
            out.extend_from_slice(format!("P2\n{} {}\n255\n", img.width(), img.height()).as_bytes());
            for row in quantized.chunks(img.width()) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    Ok(out)
}
