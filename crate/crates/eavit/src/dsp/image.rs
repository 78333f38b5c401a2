//! Spectrogram-to-image rendering and portable graymap I/O.

use super::Matrix;
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MelImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Renders a matrix as a grayscale image: bilinear resize to the target
/// extent, then min-max normalize to [0, 255]. A constant matrix maps to
/// all zeros. Normalizing after the resize guarantees the output spans the
/// full 8-bit range whenever the source is non-constant.
pub fn to_image(m: &Matrix, height: usize, width: usize) -> MelImage {
    assert!(height > 0 && width > 0, "empty target image");
    let resized = bilinear(m, height, width);
    let lo = resized.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = resized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels = if span > 0.0 {
        resized.iter().map(|&v| (((v - lo) / span) * 255.0).round() as u8).collect()
    } else {
        vec![0; height * width]
    };
    MelImage { width, height, pixels }
}

/// Align-corner bilinear interpolation.
fn bilinear(m: &Matrix, height: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(height * width);
    let y_scale = if height > 1 { (m.rows - 1) as f64 / (height - 1) as f64 } else { 0.0 };
    let x_scale = if width > 1 { (m.cols - 1) as f64 / (width - 1) as f64 } else { 0.0 };
    for r in 0..height {
        let y = r as f64 * y_scale;
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(m.rows - 1);
        let fy = y - y0 as f64;
        for c in 0..width {
            let x = c as f64 * x_scale;
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(m.cols - 1);
            let fx = x - x0 as f64;
            let top = m.at(y0, x0) * (1.0 - fx) + m.at(y0, x1) * fx;
            let bottom = m.at(y1, x0) * (1.0 - fx) + m.at(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Writes a binary PGM (P5) file; the fixed header makes output
/// byte-identical across runs.
pub fn write_pgm(path: &Path, img: &MelImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    fs::write(path, bytes).map_err(|e| Error::Io(path.to_path_buf(), e))
}

pub fn read_pgm(path: &Path) -> Result<MelImage> {
    let bytes = fs::read(path).map_err(|e| Error::Io(path.to_path_buf(), e))?;
    let fail = |msg: &str| Error::data(path, msg);
    if !bytes.starts_with(b"P5") {
        return Err(fail("not a binary PGM file"));
    }
    // Header: three whitespace-separated fields after the magic.
    let mut fields = Vec::new();
    let mut pos = 2;
    while fields.len() < 3 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos > start {
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| fail("malformed header"))?
                    .to_owned(),
            );
        }
    }
    if fields.len() != 3 || pos >= bytes.len() {
        return Err(fail("truncated header"));
    }
    pos += 1; // single whitespace byte after maxval
    let width: usize = fields[0].parse().map_err(|_| fail("bad width"))?;
    let height: usize = fields[1].parse().map_err(|_| fail("bad height"))?;
    if fields[2] != "255" {
        return Err(fail("expected 8-bit maxval 255"));
    }
    let expected = width * height;
    let pixels = bytes[pos..].to_vec();
    if pixels.len() != expected {
        return Err(fail(&format!("expected {expected} pixels, found {}", pixels.len())));
    }
    Ok(MelImage { width, height, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_maps_to_zero_and_max_to_255() {
        let m = Matrix { rows: 2, cols: 2, data: vec![-30.0, -10.0, -20.0, 0.0] };
        let img = to_image(&m, 2, 2);
        assert_eq!(img.pixels, vec![0, 170, 85, 255]);
    }

    #[test]
    fn constant_matrix_renders_black() {
        let m = Matrix { rows: 3, cols: 5, data: vec![-17.0; 15] };
        let img = to_image(&m, 4, 4);
        assert!(img.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn upsampling_spans_the_full_range() {
        let m = Matrix { rows: 2, cols: 3, data: vec![0.0, 3.0, 6.0, 1.0, 4.0, 9.0] };
        let img = to_image(&m, 8, 8);
        assert_eq!((img.height, img.width), (8, 8));
        assert!(img.pixels.contains(&0));
        assert!(img.pixels.contains(&255));
    }

    #[test]
    fn interpolation_midpoint_is_the_average() {
        let m = Matrix { rows: 1, cols: 2, data: vec![0.0, 10.0] };
        let img = to_image(&m, 1, 3);
        assert_eq!(img.pixels, vec![0, 128, 255]); // 5.0 normalizes to 127.5, rounds up
    }

    #[test]
    fn pgm_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = MelImage { width: 3, height: 2, pixels: vec![0, 10, 255, 7, 8, 9] };
        write_pgm(&path, &img).unwrap();
        let again = read_pgm(&path).unwrap();
        assert_eq!(again, img);

        write_pgm(&path, &img).unwrap();
        let b1 = std::fs::read(&path).unwrap();
        write_pgm(&path, &img).unwrap();
        assert_eq!(b1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn pgm_rejects_wrong_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\nabc").unwrap();
        assert!(read_pgm(&path).is_err());
        std::fs::write(&path, b"P6\n1 1\n255\nx").unwrap();
        assert!(read_pgm(&path).is_err());
    }
}
