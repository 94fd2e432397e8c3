//! Reading and writing individual samples.
//!
//! Two on-disk encodings are understood: binary portable graymaps (`P5`,
//! maxval at most 255) and plain numeric text with one value per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A sample as read from disk, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub values: Vec<f64>,
    /// Value that maps to 1.0 after normalization (graymap maxval, or 1 for text).
    pub full_scale: f64,
    /// Image width and height when the sample came from a graymap.
    pub shape: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pgm,
    Text,
}

impl SampleFormat {
    pub fn extension(self) -> &'static str {
        match self {
            SampleFormat::Pgm => "pgm",
            SampleFormat::Text => "txt",
        }
    }
}

pub fn read_sample(path: &Path) -> Result<RawSample> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes).map_err(|message| Error::Sample {
            path: path.to_path_buf(),
            message,
        })
    } else {
        parse_text(&bytes, path)
    }
}

fn parse_text(bytes: &[u8], path: &Path) -> Result<RawSample> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Sample {
        path: path.to_path_buf(),
        message: "neither a P5 graymap nor utf-8 text".into(),
    })?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Sample {
            path: path.to_path_buf(),
            message: format!("line {}: cannot parse {line:?} as a number", lineno + 1),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{} line {}", path.display(), lineno + 1),
            });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Sample {
            path: path.to_path_buf(),
            message: "no values".into(),
        });
    }
    Ok(RawSample {
        values,
        full_scale: 1.0,
        shape: None,
    })
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<RawSample, String> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| "header field overflow".to_string())?;
    }
    let [width, height, maxval] = header;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after maxval".into());
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err("zero-sized image".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval} (expected 1..=255)"));
    }
    let count = width * height;
    let data = bytes
        .get(pos..pos + count)
        .ok_or_else(|| format!("expected {count} pixel bytes"))?;
    if let Some(&bad) = data.iter().find(|&&b| b as usize > maxval) {
        return Err(format!("pixel value {bad} exceeds maxval {maxval}"));
    }
    Ok(RawSample {
        values: data.iter().map(|&b| f64::from(b)).collect(),
        full_scale: maxval as f64,
        shape: Some((width, height)),
    })
}

/// Writes normalized values as an 8-bit graymap; values are clamped to [0,1]
/// and rounded to the nearest level.
pub fn write_pgm(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    if width * height != values.len() {
        return Err(Error::dims("graymap pixel count", width * height, values.len()));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes one value per line using the shortest representation that parses
/// back to the same `f64`.
pub fn write_text(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = Vec::with_capacity(values.len() * 20);
    for v in values {
        writeln!(out, "{v}").expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_sample(
    path: &Path,
    values: &[f64],
    format: SampleFormat,
    shape: Option<(usize, usize)>,
) -> Result<()> {
    match (format, shape) {
        (SampleFormat::Pgm, Some((w, h))) => write_pgm(path, values, w, h),
        (SampleFormat::Pgm, None) => Err(Error::InvalidParameter(
            "graymap output requires an image shape".into(),
        )),
        (SampleFormat::Text, _) => write_text(path, values),
    }
}
