//! Binary portable graymap (P5, 8-bit) encoding and decoding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::supervised::GrayImage;

fn bad(path: &str, reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "PGM",
        path: path.into(),
        reason: reason.into(),
    }
}

/// Decode a P5 graymap with `maxval <= 255`. `path` is only used in errors.
pub fn decode(bytes: &[u8], path: &str) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic = bytes.get(..2).ok_or_else(|| bad(path, "truncated header"))?;
    if magic != b"P5" {
        return Err(bad(path, "not a binary graymap (P5)"));
    }
    pos += 2;
    for field in fields.iter_mut() {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(path, "expected a number in header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad(path, format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad(path, "missing separator after header"));
    }
    pos += 1;
    let data = &bytes[pos..];
    if data.len() < width * height {
        return Err(bad(
            path,
            format!("expected {} pixels, found {}", width * height, data.len()),
        ));
    }
    let pixels = data[..width * height]
        .iter()
        .map(|&v| ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8)
        .collect();
    GrayImage::new(width, height, pixels)
}

pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn write(path: &Path, img: &GrayImage) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

/// Map values linearly onto 0..=255 between their min and max.
pub fn normalized(width: usize, height: usize, values: &[f64]) -> Result<GrayImage> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v - lo) / span).round() as u8
            } else {
                0
            }
        })
        .collect();
    GrayImage::new(width, height, pixels)
}
