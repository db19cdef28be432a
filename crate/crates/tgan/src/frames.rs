//! Binary PGM (P5) and PPM (P6) frame export.

use std::fs;
use std::path::{Path, PathBuf};

use tgan_core::model::VideoClip;
use tgan_core::Real;

use crate::error::{Error, Result};
use crate::tnsr::write_atomic;

/// Map `[-1, 1]` to a byte with half-up rounding; out-of-range values
/// saturate and NaN maps to 0.
pub fn pixel_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encode one `[C, H, W]` frame with `C` of 1 or 3.
pub fn encode_frame<T: Real>(data: &[T], channels: usize, height: usize, width: usize) -> Result<Vec<u8>> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Usage(format!("frames need 1 or 3 channels, got {c}"))),
    };
    let plane = height * width;
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.reserve(plane * channels);
    for p in 0..plane {
        for c in 0..channels {
            out.push(pixel_byte(data[c * plane + p].to_f64_lossy()));
        }
    }
    Ok(out)
}

/// Write `frame-NNNN.pgm` (or `.ppm`) per frame into `dir` and return the paths.
pub fn export_frames<T: Real>(clip: &VideoClip<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    let s = clip.frames.shape();
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = if c == 1 { "pgm" } else { "ppm" };
    let mut paths = Vec::with_capacity(t);
    for (f, frame) in clip.frames.data().chunks(c * h * w).enumerate() {
        let path = dir.join(format!("frame-{f:04}.{ext}"));
        write_atomic(&path, &encode_frame(frame, c, h, w)?)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping() {
        assert_eq!(pixel_byte(-1.0), 0);
        assert_eq!(pixel_byte(0.0), 128);
        assert_eq!(pixel_byte(1.0), 255);
        assert_eq!(pixel_byte(5.0), 255);
        assert_eq!(pixel_byte(f64::NAN), 0);
    }
}
