//! Packed video container.
//!
//! ```text
//! "CAVF" | version: u32 | n: u32 | H: u32 | W: u32 | C: u32 | payload: n·H·W·C bytes
//! ```
//!
//! Integers are little-endian; the payload is frame-major, then row-major, with channels
//! interleaved.

use std::io::{Read, Write};
use std::path::Path;

use super::DataError;
use crate::numerics::Tensor;

pub const PACKED_MAGIC: &[u8; 4] = b"CAVF";
pub const PACKED_VERSION: u32 = 1;
pub const CHANNELS: usize = 3;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedVideo {
    pub id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl PackedVideo {
    pub fn new(
        id: impl Into<String>,
        frames: usize,
        height: usize,
        width: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, DataError> {
        let expected = frames
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(CHANNELS));
        if frames == 0 || height == 0 || width == 0 {
            return Err(DataError::Invalid(
                "video dimensions must be positive".into(),
            ));
        }
        if expected != Some(pixels.len()) {
            return Err(DataError::Invalid(format!(
                "payload of {} bytes does not match {frames}x{height}x{width}x3",
                pixels.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            frames,
            height,
            width,
            pixels,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    /// Pixels of 1-based frame `index`.
    pub fn frame(&self, index: usize) -> &[u8] {
        let len = self.frame_len();
        &self.pixels[(index - 1) * len..index * len]
    }

    /// Stacks 1-based frames into a `[T, H, W, 3]` tensor scaled to `[0, 1]`.
    pub fn clip(&self, indices: &[usize]) -> Result<Tensor, DataError> {
        if let Some(&bad) = indices.iter().find(|&&i| i == 0 || i > self.frames) {
            return Err(DataError::Invalid(format!(
                "frame {bad} out of range 1..={} in video {}",
                self.frames, self.id
            )));
        }
        let data = indices
            .iter()
            .flat_map(|&i| self.frame(i).iter().map(|&b| f64::from(b) / 255.0))
            .collect();
        Ok(Tensor::new(
            &[indices.len(), self.height, self.width, CHANNELS],
            data,
        )?)
    }

    pub fn mean_intensity(&self) -> f64 {
        self.pixels.iter().map(|&b| f64::from(b)).sum::<f64>() / (255.0 * self.pixels.len() as f64)
    }
}

pub fn write_packed<W: Write>(mut w: W, video: &PackedVideo) -> Result<(), DataError> {
    w.write_all(PACKED_MAGIC)?;
    for v in [
        PACKED_VERSION as usize,
        video.frames,
        video.height,
        video.width,
        CHANNELS,
    ] {
        let v = u32::try_from(v)
            .map_err(|_| DataError::Invalid(format!("dimension {v} exceeds u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&video.pixels)?;
    w.flush()?;
    Ok(())
}

/// Parses a packed video; `id` is attached as given since the format does not store one.
pub fn read_packed<R: Read>(mut r: R, id: impl Into<String>) -> Result<PackedVideo, DataError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let parse_err = |offset: usize, message: String| DataError::Parse { offset, message };
    if bytes.len() < 4 || &bytes[..4] != PACKED_MAGIC {
        return Err(parse_err(0, "bad magic, expected \"CAVF\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(
            bytes.len(),
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    let field = |i: usize| {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
    };
    let (version, n, h, w, c) = (field(0), field(1), field(2), field(3), field(4));
    if version != PACKED_VERSION as usize {
        return Err(parse_err(4, format!("unsupported version {version}")));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(parse_err(8, format!("zero dimension in {n}x{h}x{w}")));
    }
    if c != CHANNELS {
        return Err(parse_err(20, format!("unsupported channel count {c}")));
    }
    let payload = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| parse_err(8, format!("dimension overflow in {n}x{h}x{w}x{c}")))?;
    let remaining = bytes.len() - HEADER_LEN;
    if payload > remaining {
        return Err(parse_err(
            HEADER_LEN + remaining,
            format!("truncated payload: declared {payload} bytes, {remaining} present"),
        ));
    }
    if payload < remaining {
        return Err(parse_err(
            HEADER_LEN + payload,
            format!("{} trailing bytes", remaining - payload),
        ));
    }
    bytes.drain(..HEADER_LEN);
    PackedVideo::new(id, n, h, w, bytes)
}

pub fn write_packed_file(path: &Path, video: &PackedVideo) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::at_path(path, e))?;
    write_packed(std::io::BufWriter::new(file), video)
}

pub fn read_packed_file(path: &Path, id: impl Into<String>) -> Result<PackedVideo, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::at_path(path, e))?;
    read_packed(std::io::BufReader::new(file), id)
}
