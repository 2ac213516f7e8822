//! 8-bit grayscale images and their on-disk formats (binary PGM, PNG).

use std::io::{Cursor, Write};
use std::path::Path;

use crate::frames::FrameError;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::Format(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(FrameError::Format(format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Panics on zero dimensions.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Reads a binary PGM (P5, maxval 255) or an 8-bit grayscale PNG, chosen by
/// the file's magic bytes.
pub fn read_gray(path: &Path) -> Result<GrayImage, FrameError> {
    let bytes = std::fs::read(path).map_err(|source| FrameError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_gray(&bytes).map_err(|e| match e {
        FrameError::Format(msg) => FrameError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage, FrameError> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(PNG_MAGIC) {
        decode_png(bytes)
    } else {
        Err(FrameError::Format(
            "unrecognized image format (expected binary PGM or PNG)".into(),
        ))
    }
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<usize, FrameError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while !matches!(bytes.get(*pos), Some(b'\n') | None) {
                    *pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(FrameError::Format("truncated PGM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FrameError::Format("malformed PGM header".into()))
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, FrameError> {
    let mut pos = 2;
    let width = pgm_token(bytes, &mut pos)?;
    let height = pgm_token(bytes, &mut pos)?;
    let maxval = pgm_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(FrameError::Format(format!(
            "only 8-bit PGM (maxval 255) is supported, got maxval {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(FrameError::Format("malformed PGM header".into()));
    }
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| FrameError::Format("truncated PGM raster".into()))?;
    GrayImage::new(width, height, raster.to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage, FrameError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| FrameError::Format(format!("PNG: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(FrameError::Format(format!(
            "PNG must be 8-bit grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FrameError::Format("PNG too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| FrameError::Format(format!("PNG: {e}")))?;
    buf.truncate(frame.buffer_size());
    GrayImage::new(frame.width as usize, frame.height as usize, buf)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_png(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer
            .write_image_data(&img.data)
            .expect("in-memory PNG data");
    }
    out
}

/// 16-bit binary PGM (maxval 65535, big-endian samples).
pub fn encode_pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    assert_eq!(samples.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_pgm(img))
}
