//! Per-pixel semantic label maps and their binary PGM (P5) storage.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Pixels carrying this id have no semantic label and are skipped by every
/// histogram.
pub const VOID_ID: u8 = 255;

/// Number of Cityscapes training classes.
pub const DEFAULT_CLASS_COUNT: usize = 19;

/// Row-major grid of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "label map must be non-empty, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                found: labels.len(),
            });
        }
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        self.labels[row * self.width + col] = label;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.labels[row * self.width..(row + 1) * self.width]
    }

    /// Checks that every pixel is either a valid class id or void.
    pub fn validate(&self, class_count: usize) -> Result<()> {
        for (i, &value) in self.labels.iter().enumerate() {
            if value != VOID_ID && usize::from(value) >= class_count {
                return Err(Error::ClassOutOfRange {
                    value,
                    class_count,
                    row: i / self.width,
                    col: i % self.width,
                });
            }
        }
        Ok(())
    }

    /// Parses a binary PGM with maxval 255.
    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = PgmHeader { bytes, pos: 0 };
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(Error::Pgm("missing P5 magic".into()));
        }
        cursor.pos = 2;
        let width = cursor.next_number("width")?;
        let height = cursor.next_number("height")?;
        let maxval = cursor.next_number("maxval")?;
        if maxval != 255 {
            return Err(Error::Pgm(format!("maxval must be 255, found {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err(Error::Pgm("missing whitespace after maxval".into())),
        }
        let needed = width
            .checked_mul(height)
            .ok_or_else(|| Error::Pgm("dimensions overflow".into()))?;
        let payload = &bytes[cursor.pos..];
        if payload.len() < needed {
            return Err(Error::Pgm(format!(
                "truncated payload: expected {needed} bytes, found {}",
                payload.len()
            )));
        }
        LabelMap::new(height, width, payload[..needed].to_vec())
            .map_err(|e| Error::Pgm(e.to_string()))
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.labels);
        out
    }
}

struct PgmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmHeader<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn next_number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Pgm(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm(format!("bad {what}")))
    }
}

/// Reads a label map and checks its ids against `class_count`.
pub fn load_label_map(path: &Path, class_count: usize) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let map = LabelMap::from_pgm_bytes(&bytes)?;
    map.validate(class_count)?;
    Ok(map)
}

pub fn write_label_map(path: &Path, map: &LabelMap) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, map.to_pgm_bytes()).map_err(|e| Error::io(path, e))
}
