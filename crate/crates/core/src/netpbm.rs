//! Frame grids as binary PGM (greyscale) and PBM (foreground mask) images.

use std::fs;
use std::path::Path;

use crate::corpus::FOREGROUND_THRESHOLD;
use crate::error::{Result, VmcError};
use crate::video::VideoTensor;

/// Pixel gap between tiles.
const GAP: usize = 1;

fn layout(v: &VideoTensor, cols: usize) -> Result<(usize, usize, usize)> {
    if cols == 0 {
        return Err(VmcError::Config("grid needs at least one column".into()));
    }
    let cols = cols.min(v.frame_count().max(1));
    let rows = v.frame_count().div_ceil(cols);
    let width = cols * v.width() + (cols - 1) * GAP;
    let height = rows * v.height() + rows.saturating_sub(1) * GAP;
    Ok((cols, width, height))
}

/// Tiles the frames row-major, `cols` per row, clamping values to `[0,1]`.
/// Gap pixels are `None`.
fn tile(v: &VideoTensor, cols: usize) -> Result<(usize, usize, Vec<Option<f64>>)> {
    let (cols, width, height) = layout(v, cols)?;
    let mut out = vec![None; width * height];
    for n in 0..v.frame_count() {
        let (gr, gc) = (n / cols, n % cols);
        let (oy, ox) = (gr * (v.height() + GAP), gc * (v.width() + GAP));
        for r in 0..v.height() {
            for c in 0..v.width() {
                out[(oy + r) * width + ox + c] = Some(v.pixel(n, r, c).clamp(0.0, 1.0));
            }
        }
    }
    Ok((width, height, out))
}

pub fn encode_pgm(v: &VideoTensor, cols: usize) -> Result<Vec<u8>> {
    let (w, h, px) = tile(v, cols)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(px.iter().map(|p| p.map_or(255, |p| (p * 255.0).round() as u8)));
    Ok(out)
}

/// Foreground mask: 1 (black) where a pixel exceeds the foreground threshold.
pub fn encode_pbm(v: &VideoTensor, cols: usize) -> Result<Vec<u8>> {
    let (w, h, px) = tile(v, cols)?;
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    let stride = w.div_ceil(8);
    for r in 0..h {
        let mut row = vec![0u8; stride];
        for c in 0..w {
            if px[r * w + c].is_some_and(|p| p > FOREGROUND_THRESHOLD) {
                row[c / 8] |= 0x80 >> (c % 8);
            }
        }
        out.extend(row);
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, v: &VideoTensor, cols: usize) -> Result<()> {
    fs::write(path, encode_pgm(v, cols)?)?;
    Ok(())
}

pub fn write_pbm(path: &Path, v: &VideoTensor, cols: usize) -> Result<()> {
    fs::write(path, encode_pbm(v, cols)?)?;
    Ok(())
}

/// Decodes a binary PGM written by [`encode_pgm`] into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || VmcError::Config("not a binary 8-bit PGM".into());
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad())?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(i + 1..).ok_or_else(bad)?;
    if data.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, data.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ramp(n: usize) -> VideoTensor {
        let f = Array2::from_shape_fn((n, 16), |(i, p)| (i * 16 + p) as f64 / (n * 16) as f64);
        VideoTensor::new(f, 4, 4).unwrap()
    }

    #[test]
    fn pgm_grid_dimensions_and_pixels() {
        let v = ramp(5);
        let bytes = encode_pgm(&v, 3).unwrap();
        let (w, h, px) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h), (3 * 4 + 2, 2 * 4 + 1));
        assert_eq!(px[0], 0);
        let last = (v.pixel(4, 3, 3) * 255.0).round() as u8;
        assert_eq!(px[(5 + 3) * w + 5 + 3], last);
        assert_eq!(px[4], 255);
    }

    #[test]
    fn pbm_rows_are_byte_padded() {
        let v = ramp(3);
        let bytes = encode_pbm(&v, 3).unwrap();
        let header = b"P4\n14 4\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 4 * 2);
    }

    #[test]
    fn zero_columns_is_a_config_error() {
        assert!(matches!(encode_pgm(&ramp(2), 0), Err(VmcError::Config(_))));
    }
}
