//! Binary PGM (P5) reader and writer.
//!
//! Reading accepts maxval 255 (one byte per pixel) or 65535 (two bytes,
//! big-endian, per the netpbm convention) and scales intensities to
//! [0, 1]. Writing quantizes to maxval 255. Scanline order maps directly
//! onto the grid's row order (iy = 0 is the first scanline). Parse
//! failures name the byte offset where the reader gave up.

use std::fs;
use std::path::Path;

use morphgen_core::field::{Grid, ScalarField};

use crate::error::{CliError, Result};

fn parse_err(path: &Path, offset: usize, msg: impl AsRef<str>) -> CliError {
    CliError::Data(format!(
        "{}: PGM parse error at byte {}: {}",
        path.display(),
        offset,
        msg.as_ref()
    ))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Skip whitespace and '#' comment lines.
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn read_number(&mut self, path: &Path, what: &str) -> Result<u32> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(parse_err(path, start, format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are ascii");
        text.parse::<u32>()
            .map_err(|_| parse_err(path, start, format!("{what} out of range")))
    }
}

/// Read a P5 PGM file into a [0, 1]-scaled scalar field.
pub fn pgm_read(path: &Path) -> Result<ScalarField> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(path, 0, "not a P5 binary PGM (bad magic)"));
    }
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 2,
    };
    let width = cur.read_number(path, "width")? as usize;
    let height = cur.read_number(path, "height")? as usize;
    let maxval = cur.read_number(path, "maxval")?;
    if maxval != 255 && maxval != 65535 {
        return Err(parse_err(
            path,
            cur.pos,
            format!("unsupported maxval {maxval} (need 255 or 65535)"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(parse_err(path, cur.pos, "missing separator before raster"));
    }
    cur.pos += 1;

    let bytes_per_px = if maxval == 255 { 1 } else { 2 };
    let expected = width * height * bytes_per_px;
    let available = bytes.len() - cur.pos;
    if available < expected {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("raster truncated: expected {expected} bytes, found {available}"),
        ));
    }
    let grid = Grid::new(width, height).map_err(|e| {
        CliError::Data(format!("{}: unusable image dimensions: {e}", path.display()))
    })?;
    let raster = &bytes[cur.pos..cur.pos + expected];
    let scale = 1.0 / maxval as f64;
    let values: Vec<f64> = if maxval == 255 {
        raster.iter().map(|&b| b as f64 * scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|px| u16::from_be_bytes([px[0], px[1]]) as f64 * scale)
            .collect()
    };
    ScalarField::from_values(grid, values)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Write a scalar field as an 8-bit P5 PGM; values are clamped to [0, 1].
pub fn pgm_write(field: &ScalarField, path: &Path) -> Result<()> {
    let grid = field.grid();
    let mut out = format!("P5\n{} {}\n255\n", grid.nx(), grid.ny()).into_bytes();
    out.reserve(grid.len());
    for &v in field.values() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, out).map_err(|e| CliError::io(path.display().to_string(), e))
}
