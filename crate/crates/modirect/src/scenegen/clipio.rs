//! Clip tensor file format and debug image export.
//!
//! Clip tensors are stored in a minimal binary container: the ASCII magic
//! `MDV1`, four little-endian u32 dimensions (frames, height, width,
//! channels), then the frame data as little-endian f32 in row-major
//! (t, y, x, c) order. Frames can also be exported as PPM (P6) images for
//! eyeballing.

use super::{SceneGenError, VideoClip};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CLIP_MAGIC: &[u8; 4] = b"MDV1";

/// Raw clip tensor: dimensions plus row-major (t, y, x, c) data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ClipTensor {
    pub fn from_clip(clip: &VideoClip) -> ClipTensor {
        ClipTensor {
            frames: clip.spec.frames,
            height: clip.spec.height,
            width: clip.spec.width,
            channels: 3,
            data: clip.frames.clone(),
        }
    }
}

/// Write a clip tensor to `path`.
pub fn write_clip_tensor(path: &Path, t: &ClipTensor) -> Result<(), SceneGenError> {
    debug_assert_eq!(t.data.len(), t.frames * t.height * t.width * t.channels);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CLIP_MAGIC)?;
    for dim in [t.frames, t.height, t.width, t.channels] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a clip tensor, validating magic and dimensions.
pub fn read_clip_tensor(path: &Path) -> Result<ClipTensor, SceneGenError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CLIP_MAGIC {
        return Err(bad_data(format!(
            "{}: bad magic {:?} (expected {:?})",
            path.display(),
            magic,
            CLIP_MAGIC
        )));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let [frames, height, width, channels] = dims;
    let count = frames
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| bad_data(format!("{}: dimension overflow {dims:?}", path.display())))?;
    if count == 0 || count > (1 << 30) {
        return Err(bad_data(format!(
            "{}: implausible dimensions {dims:?}",
            path.display()
        )));
    }
    let mut data = vec![0f32; count];
    let mut buf = [0u8; 4];
    for v in &mut data {
        r.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    // Trailing garbage means the dims lied.
    if r.read(&mut buf)? != 0 {
        return Err(bad_data(format!(
            "{}: trailing bytes after {count} samples",
            path.display()
        )));
    }
    Ok(ClipTensor { frames, height, width, channels, data })
}

fn bad_data(msg: String) -> SceneGenError {
    SceneGenError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

/// Export one frame as a binary PPM (P6) image.
pub fn write_frame_ppm(path: &Path, frame: &[f32], width: usize, height: usize) -> Result<(), SceneGenError> {
    debug_assert_eq!(frame.len(), width * height * 3);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = frame
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrips_bit_exactly() {
        let t = ClipTensor {
            frames: 2,
            height: 3,
            width: 4,
            channels: 3,
            data: (0..72).map(|i| i as f32 * 0.013).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.mdv");
        write_clip_tensor(&path, &t).unwrap();
        let back = read_clip_tensor(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.mdv");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(read_clip_tensor(&path).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let t = ClipTensor {
            frames: 1,
            height: 2,
            width: 2,
            channels: 3,
            data: vec![0.5; 12],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.mdv");
        write_clip_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(read_clip_tensor(&path).is_err());
    }

    #[test]
    fn ppm_has_correct_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ppm");
        let frame = vec![0.5f32; 4 * 2 * 3];
        write_frame_ppm(&path, &frame, 4, 2).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(bytes.len(), b"P6\n4 2\n255\n".len() + 24);
    }
}
