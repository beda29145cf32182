//! Pre-binned frame datasets in a flat little-endian file.
//!
//! ```text
//! offset  type            content
//! 0       u64             n_samples
//! 8       u64             time (frames per sample)
//! 16      u64             channels
//! 24      f32 × n·T·C     frames, sample-major, then time, then channel
//! ...     u32 × n         labels
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::network::FrameSequence;

const HEADER: usize = 24;

/// Write equally-shaped sequences. Frames are stored as `f32`.
pub fn write_frames(path: &Path, data: &[FrameSequence]) -> Result<()> {
    let (t, c) = data.first().map_or((0, 0), |s| s.frames.dim());
    if let Some(s) = data.iter().find(|s| s.frames.dim() != (t, c)) {
        return Err(Error::Shape(format!(
            "sequence shape {:?} differs from {:?}",
            s.frames.dim(),
            (t, c)
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for v in [data.len() as u64, t as u64, c as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for s in data {
        for v in s.frames.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    for s in data {
        let label =
            u32::try_from(s.label).map_err(|_| Error::InvalidArgument(format!("label {} too large", s.label)))?;
        w.write_all(&label.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a file written by [`write_frames`], tagging every sequence with
/// `resolution`.
pub fn read_frames(path: &Path, resolution: u32) -> Result<Vec<FrameSequence>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < HEADER {
        return Err(Error::Serde(format!("{}: truncated header", path.display())));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
    let (n, t, c) = (word(0) as usize, word(1) as usize, word(2) as usize);
    let frame_bytes = n
        .checked_mul(t)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Serde("header sizes overflow".into()))?;
    let expected = HEADER + frame_bytes + 4 * n;
    if bytes.len() != expected {
        return Err(Error::Serde(format!(
            "{}: {} bytes, header implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as f64;
    let labels_at = HEADER + frame_bytes;
    (0..n)
        .map(|i| {
            let base = HEADER + i * t * c * 4;
            let frames = Array2::from_shape_fn((t, c), |(r, k)| f32_at(base + (r * c + k) * 4));
            let label = u32::from_le_bytes(
                bytes[labels_at + 4 * i..labels_at + 4 * i + 4]
                    .try_into()
                    .expect("4 bytes"),
            );
            Ok(FrameSequence::new(frames, resolution, label as usize))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.bin");
        let data = vec![
            FrameSequence::new(array![[1.0, 2.0], [3.0, 0.5]], 1, 3),
            FrameSequence::new(array![[0.0, 0.0], [7.0, 1.0]], 1, 0),
        ];
        write_frames(&path, &data).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + 2 * 4 * 4 + 8);
        assert_eq!(read_frames(&path, 1).unwrap(), data);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, [1u8; 30]).unwrap();
        assert!(read_frames(&path, 1).is_err());
    }
}
