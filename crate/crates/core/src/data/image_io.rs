//! Image file handling: 8-bit RGB (PPM/PNG) and 16-bit grayscale (PGM/PNG).
//!
//! The netpbm codecs are hand-rolled so synthetic datasets are byte-exact
//! across runs; PNG goes through the `image` crate. Formats are picked by
//! file extension.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// 8-bit RGB image in planar [1, 3, H, W] layout, scaled to [0, 1].
pub fn load_rgb(path: &Path) -> Result<Tensor<f32>> {
    let (w, h, rgb) = match extension(path)? {
        "ppm" => decode_ppm(&read(path)?, path)?,
        "png" => {
            let img = image::open(path)
                .map_err(|e| Error::data(path, format!("png decode failed: {e}")))?;
            let rgb = match img {
                image::DynamicImage::ImageRgb8(img) => img,
                other => {
                    return Err(Error::data(
                        path,
                        format!("expected 8-bit RGB png, got {:?}", other.color()),
                    ))
                }
            };
            (rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
        }
        ext => return Err(Error::data(path, format!("unsupported RGB extension '{ext}'"))),
    };
    // Interleaved bytes -> planar floats.
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                t.set(0, c, y, x, rgb[(y * w + x) * 3 + c] as f32 / 255.0);
            }
        }
    }
    Ok(t)
}

/// 16-bit single-channel depth raster as raw integer values in [0, 65535].
pub fn load_depth_u16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    match extension(path)? {
        "pgm" => decode_pgm(&read(path)?, path),
        "png" => {
            let img = image::open(path)
                .map_err(|e| Error::data(path, format!("png decode failed: {e}")))?;
            let gray = match img {
                image::DynamicImage::ImageLuma16(img) => img,
                other => {
                    return Err(Error::data(
                        path,
                        format!("expected 16-bit grayscale png, got {:?}", other.color()),
                    ))
                }
            };
            Ok((gray.width() as usize, gray.height() as usize, gray.into_raw()))
        }
        ext => Err(Error::data(path, format!("unsupported depth extension '{ext}'"))),
    }
}

pub fn save_rgb(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::invalid("save_rgb", format!("expected [1, 3, H, W], got {s}")));
    }
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut interleaved = Vec::with_capacity(s.h * s.w * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                interleaved.push(quantize(t.at(0, c, y, x)));
            }
        }
    }
    match extension(path)? {
        "ppm" => {
            let mut bytes = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
            bytes.extend_from_slice(&interleaved);
            write(path, &bytes)
        }
        "png" => {
            let img = image::RgbImage::from_raw(s.w as u32, s.h as u32, interleaved)
                .expect("buffer sized above");
            img.save(path).map_err(|e| Error::data(path, format!("png encode failed: {e}")))
        }
        ext => Err(Error::data(path, format!("unsupported RGB extension '{ext}'"))),
    }
}

pub fn save_depth_u16(path: &Path, w: usize, h: usize, data: &[u16]) -> Result<()> {
    if data.len() != w * h {
        return Err(Error::invalid("save_depth", "buffer does not match dimensions"));
    }
    match extension(path)? {
        "pgm" => {
            let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
            for v in data {
                bytes.extend_from_slice(&v.to_be_bytes());
            }
            write(path, &bytes)
        }
        "png" => {
            let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
                w as u32,
                h as u32,
                data.to_vec(),
            )
            .expect("buffer sized above");
            img.save(path).map_err(|e| Error::data(path, format!("png encode failed: {e}")))
        }
        ext => Err(Error::data(path, format!("unsupported depth extension '{ext}'"))),
    }
}

fn extension(path: &Path) -> Result<&str> {
    path.extension()
        .and_then(|e| e.to_str())
        .ok_or_else(|| Error::data(path, "missing file extension".to_string()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Netpbm header tokenizer: whitespace-separated tokens, '#' comments.
fn pnm_tokens(bytes: &[u8], count: usize, path: &Path) -> Result<(Vec<usize>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::data(path, "truncated netpbm header".to_string()));
        }
        let tok = std::str::from_utf8(&bytes[start..i])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::data(path, "malformed netpbm header token".to_string()))?;
        tokens.push(tok);
    }
    // Exactly one whitespace byte separates the header from the raster.
    Ok((tokens, i + 1))
}

fn decode_ppm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::data(path, "not a binary PPM (P6) file".to_string()));
    }
    let (dims, raster) = pnm_tokens(&bytes[2..], 3, path)?;
    let (w, h, maxval) = (dims[0], dims[1], dims[2]);
    if maxval != 255 {
        return Err(Error::data(path, format!("expected 8-bit PPM (maxval 255), got {maxval}")));
    }
    let raster = &bytes[2 + raster..];
    if raster.len() < w * h * 3 {
        return Err(Error::data(path, "PPM raster shorter than header promises".to_string()));
    }
    Ok((w, h, raster[..w * h * 3].to_vec()))
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::data(path, "not a binary PGM (P5) file".to_string()));
    }
    let (dims, raster) = pnm_tokens(&bytes[2..], 3, path)?;
    let (w, h, maxval) = (dims[0], dims[1], dims[2]);
    if maxval != 65535 {
        return Err(Error::data(path, format!("expected 16-bit PGM (maxval 65535), got {maxval}")));
    }
    let raster = &bytes[2 + raster..];
    if raster.len() < w * h * 2 {
        return Err(Error::data(path, "PGM raster shorter than header promises".to_string()));
    }
    let data = raster[..w * h * 2]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((w, h, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.pgm");
        let data: Vec<u16> = (0..12).map(|v| (v * 5000) as u16).collect();
        save_depth_u16(&path, 4, 3, &data).unwrap();
        let (w, h, back) = load_depth_u16(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, data);
    }

    #[test]
    fn png_depth_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.png");
        let data: Vec<u16> = (0..30).map(|v| 65535 - (v * 2000) as u16).collect();
        save_depth_u16(&path, 5, 6, &data).unwrap();
        let (w, h, back) = load_depth_u16(&path).unwrap();
        assert_eq!((w, h), (5, 6));
        assert_eq!(back, data);
    }

    #[test]
    fn ppm_rgb_roundtrip_quantizes_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let t = Tensor::from_fn(Shape::new(1, 3, 2, 2), |_, c, h, w| {
            (c * 4 + h * 2 + w) as f32 / 11.0
        });
        save_rgb(&path, &t).unwrap();
        let back = load_rgb(&path).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn all_white_rgb_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.ppm");
        save_rgb(&path, &Tensor::full(Shape::new(1, 3, 3, 3), 1.0)).unwrap();
        let back = load_rgb(&path).unwrap();
        assert!(back.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pgm_comments_and_whitespace_are_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weird.pgm");
        let mut bytes = b"P5 # comment\n# another\n 2\t1\n65535\n".to_vec();
        bytes.extend_from_slice(&1000u16.to_be_bytes());
        bytes.extend_from_slice(&2000u16.to_be_bytes());
        std::fs::write(&path, bytes).unwrap();
        let (w, h, data) = load_depth_u16(&path).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(data, vec![1000, 2000]);
    }

    #[test]
    fn eight_bit_pgm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lowdepth.pgm");
        std::fs::write(&path, b"P5\n1 1\n255\n\x7f").unwrap();
        assert!(load_depth_u16(&path).is_err());
    }

    #[test]
    fn missing_file_error_names_path() {
        let err = load_rgb(Path::new("/nonexistent/foo.ppm")).unwrap_err();
        assert!(err.to_string().contains("foo.ppm"));
    }
}
