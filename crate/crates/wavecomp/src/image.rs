//! 8-bit grayscale images plus the file formats the toolkit ingests
//! (binary PGM and grayscale PNG) and the bilinear resize used when
//! normalizing a corpus to one geometry.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("sample buffer holds {got} bytes, {width}x{height} needs {need}")]
    SampleCountMismatch { width: u32, height: u32, got: usize, need: usize },
    #[error("not a binary PGM (P5) file")]
    BadPgmMagic,
    #[error("malformed PGM header: {0}")]
    BadPgmHeader(String),
    #[error("PGM maxval {0} unsupported (only 8-bit images are handled)")]
    UnsupportedMaxval(u32),
    #[error("PNG is not 8-bit grayscale")]
    UnsupportedPng,
    #[error("unrecognized image format for {0}")]
    UnknownFormat(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A width x height grid of 8-bit grayscale samples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    samples: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, samples: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        let need = width as usize * height as usize;
        if samples.len() != need {
            return Err(ImageError::SampleCountMismatch { width, height, got: samples.len(), need });
        }
        Ok(Image { width, height, samples })
    }

    pub fn constant(width: u32, height: u32, value: u8) -> Result<Self, ImageError> {
        Image::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.samples[y as usize * self.width as usize + x as usize]
    }

    /// Dispatches on file extension, with a signature sniff as fallback.
    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.starts_with(b"P5") {
            Image::from_pgm_bytes(&bytes)
        } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
            Image::from_png_bytes(&bytes)
        } else {
            Err(ImageError::UnknownFormat(path.display().to_string()))
        }
    }

    pub fn read_pgm(path: &Path) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Image::from_pgm_bytes(&bytes)
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        if !bytes.starts_with(b"P5") {
            return Err(ImageError::BadPgmMagic);
        }
        let mut pos = 2;
        let mut fields = [0u32; 3];
        for field in fields.iter_mut() {
            *field = read_pgm_int(bytes, &mut pos)?;
        }
        let [width, height, maxval] = fields;
        if maxval == 0 || maxval > 255 {
            return Err(ImageError::UnsupportedMaxval(maxval));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width as usize * height as usize;
        if bytes.len() < pos + need {
            return Err(ImageError::BadPgmHeader("raster shorter than header promises".into()));
        }
        Image::new(width, height, bytes[pos..pos + need].to_vec())
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ImageError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_pgm_bytes())?;
        Ok(())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| ImageError::Png(e.to_string()))?;
        let info = reader.info();
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::UnsupportedPng);
        }
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let out = reader.next_frame(&mut buf).map_err(|e| ImageError::Png(e.to_string()))?;
        let (width, height) = (out.width, out.height);
        buf.truncate(out.buffer_size());
        Image::new(width, height, buf)
    }

    /// Bilinear resample to the requested geometry (pixel-center aligned).
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.get(x0, y0) as f64 * (1.0 - wx) + self.get(x1, y0) as f64 * wx;
                let bot = self.get(x0, y1) as f64 * (1.0 - wx) + self.get(x1, y1) as f64 * wx;
                out.push((top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8);
            }
        }
        Image::new(width, height, out)
    }
}

fn read_pgm_int(bytes: &[u8], pos: &mut usize) -> Result<u32, ImageError> {
    // skip whitespace and '#' comment lines
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::BadPgmHeader("expected integer".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::BadPgmHeader("integer out of range".into()))
}
