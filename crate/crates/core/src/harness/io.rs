//! Grayscale frame output and PGM input.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffusion::Tensor;
use crate::error::{Error, Result};
use crate::smoothing::ForegroundMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    #[default]
    Pgm,
    Png,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Pgm => "pgm",
            FrameFormat::Png => "png",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Channel mean, then min-max scaling to `0..=255`. A constant frame maps to
/// 128 everywhere.
pub fn quantize(frame: &Tensor) -> Array2<u8> {
    let mean = frame.mean_axis(Axis(2)).expect("at least one channel");
    let (lo, hi) = mean
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range <= 0.0 || !range.is_finite() {
        return mean.mapv(|_| 128);
    }
    mean.mapv(|v| ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8)
}

pub fn encode_pgm(pixels: &Array2<u8>) -> Vec<u8> {
    let (h, w) = pixels.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.iter());
    out
}

/// Parses a binary (P5) PGM with maxval at most 255. Comments are allowed
/// between header fields.
pub fn decode_pgm(bytes: &[u8]) -> Result<Array2<u8>> {
    let bad = |reason: &str| Error::Format {
        what: "PGM",
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let field = |pos: &mut usize| -> Result<usize> {
        loop {
            match bytes.get(*pos) {
                Some(b) if b.is_ascii_whitespace() => *pos += 1,
                Some(b'#') => {
                    while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                        *pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = *pos;
        while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
            *pos += 1;
        }
        if start == *pos {
            return Err(bad("expected a decimal header field"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| bad("header field out of range"))
    };
    let w = field(&mut pos)?;
    let h = field(&mut pos)?;
    let maxval = field(&mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval"));
    }
    pos += 1;
    let n = w.checked_mul(h).ok_or_else(|| bad("dimensions overflow"))?;
    if n == 0 {
        return Err(bad("empty image"));
    }
    let data = bytes.get(pos..).filter(|d| d.len() >= n).ok_or_else(|| bad("truncated pixel data"))?;
    let data = &data[..n];
    if data.iter().any(|&p| p as usize > maxval) {
        return Err(bad("pixel exceeds maxval"));
    }
    Ok(Array2::from_shape_vec((h, w), data.to_vec()).expect("length checked"))
}

/// A mask is a PGM whose pixels are all 0 (background) or 255 (foreground).
pub fn decode_mask(bytes: &[u8]) -> Result<ForegroundMask> {
    let px = decode_pgm(bytes)?;
    if px.iter().any(|&p| p != 0 && p != 255) {
        return Err(Error::Format {
            what: "mask",
            reason: "pixels must be 0 or 255".into(),
        });
    }
    Ok(ForegroundMask::new(px.mapv(|p| p == 255)))
}

pub fn frame_name(k: usize, format: FrameFormat) -> String {
    format!("frame_{k:03}.{}", format.extension())
}

pub fn write_frames(frames: &[Tensor], dir: &Path, format: FrameFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let path = dir.join(frame_name(k, format));
            let px = quantize(f);
            match format {
                FrameFormat::Pgm => fs::write(&path, encode_pgm(&px)).map_err(io_err(&path))?,
                FrameFormat::Png => {
                    let (h, w) = px.dim();
                    let img = image::GrayImage::from_raw(w as u32, h as u32, px.iter().copied().collect())
                        .expect("buffer matches dimensions");
                    img.save_with_format(&path, image::ImageFormat::Png).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: std::io::Error::other(e),
                    })?;
                }
            }
            Ok(path)
        })
        .collect()
}

pub fn read_pgm(path: &Path) -> Result<Array2<u8>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_pgm(&bytes)
}

/// Reads `frame_000.pgm`, `frame_001.pgm`, .. until the first gap. Pixels
/// come back as single-channel frames scaled to `[0, 1]`.
pub fn read_frames(dir: &Path) -> Result<Vec<Tensor>> {
    let mut frames = Vec::new();
    loop {
        let path = dir.join(frame_name(frames.len(), FrameFormat::Pgm));
        if !path.exists() {
            break;
        }
        let px = read_pgm(&path)?;
        let (h, w) = px.dim();
        frames.push(Tensor::from_shape_fn((h, w, 1), |(i, j, _)| px[[i, j]] as f64 / 255.0));
    }
    if frames.is_empty() {
        return Err(Error::Config(format!("no frame_000.pgm in {}", dir.display())));
    }
    Ok(frames)
}

/// Reads `mask_000.pgm` .. `mask_{frames-1}.pgm`.
pub fn read_masks(dir: &Path, frames: usize) -> Result<Vec<ForegroundMask>> {
    (0..frames)
        .map(|k| {
            let path = dir.join(format!("mask_{k:03}.pgm"));
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            decode_mask(&bytes)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_frame_is_mid_gray() {
        let px = quantize(&Tensor::from_elem((3, 4, 2), 0.7));
        assert!(px.iter().all(|&p| p == 128));
    }

    #[test]
    fn pgm_round_trip() {
        let f = Tensor::from_shape_fn((5, 3, 2), |(i, j, c)| (i * 7 + j * 3 + c) as f64 * 0.1 - 1.0);
        let px = quantize(&f);
        assert_eq!(px.iter().copied().min(), Some(0));
        assert_eq!(px.iter().copied().max(), Some(255));
        assert_eq!(decode_pgm(&encode_pgm(&px)).unwrap(), px);
    }

    #[test]
    fn header_comments_and_errors() {
        let bytes = b"P5 # c\n2 1\n# x\n255\n\x00\xff";
        assert_eq!(decode_pgm(bytes).unwrap(), ndarray::array![[0u8, 255]]);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n10\n\x20").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_pgm(b"P5\n0 1\n255\n").is_err());
        assert!(decode_pgm(b"P5\n99999999999999999999 1\n255\n").is_err());
    }

    #[test]
    fn masks_must_be_binary() {
        let m = decode_mask(b"P5\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(m.count(), 1);
        assert!(decode_mask(b"P5\n2 1\n255\n\x00\x80").is_err());
    }

    #[test]
    fn write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let f = Tensor::from_shape_fn((4, 4, 2), |(i, j, _)| (i + j) as f64);
        let paths = write_frames(&[f.clone(), f], dir.path(), FrameFormat::Pgm).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].ends_with("frame_000.pgm"));
        assert_eq!(read_frames(dir.path()).unwrap().len(), 2);
        let png = write_frames(&[Tensor::zeros((2, 2, 1))], dir.path(), FrameFormat::Png).unwrap();
        assert!(png[0].exists());
    }
}
