//! Pixel buffers and PNG I/O.
//!
//! Images are held as `f64` planes in `[0, 1]`, channel-major (`[c][y][x]`),
//! which is the layout the detector consumes directly. Files on disk are
//! 8-bit PNGs; quantization is `round(255 * v)` in both directions so a
//! save/load round trip is exact for values that came from 8-bit data.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("png error on {path}: {message}")]
    Png { path: String, message: String },
    #[error("unsupported png layout on {path}: {message}")]
    Unsupported { path: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
}

/// A `channels × height × width` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty image");
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_planes(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels);
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// One channel plane as a contiguous slice.
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Quantize to 8-bit samples, interleaved RGB (or single-channel gray).
    pub fn to_u8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = vec![0u8; n * self.channels];
        for c in 0..self.channels {
            let plane = self.plane(c);
            for (i, &v) in plane.iter().enumerate() {
                out[i * self.channels + c] = quantize(v);
            }
        }
        out
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, samples: &[u8]) -> Self {
        assert_eq!(samples.len(), width * height * channels);
        let mut img = Image::new(width, height, channels);
        let n = width * height;
        for c in 0..channels {
            for i in 0..n {
                img.data[c * n + i] = dequantize(samples[i * channels + c]);
            }
        }
        img
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => {
                return Err(ImageError::Unsupported {
                    path: path.display().to_string(),
                    message: format!("{c} channels"),
                })
            }
        };
        let file = File::create(path).map_err(|e| ImageError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut encoder = png::Encoder::new(
            BufWriter::new(file),
            self.width as u32,
            self.height as u32,
        );
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| ImageError::Png {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        writer
            .write_image_data(&self.to_u8())
            .map_err(|e| ImageError::Png {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let file = File::open(path).map_err(|e| ImageError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let decoder = png::Decoder::new(file);
        let mut reader = decoder.read_info().map_err(|e| ImageError::Png {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut buf = vec![0u8; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).map_err(|e| ImageError::Png {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Unsupported {
                path: path.display().to_string(),
                message: format!("bit depth {:?}", info.bit_depth),
            });
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => {
                return Err(ImageError::Unsupported {
                    path: path.display().to_string(),
                    message: format!("color type {other:?}"),
                })
            }
        };
        let (w, h) = (info.width as usize, info.height as usize);
        buf.truncate(w * h * channels);
        Ok(Image::from_u8(w, h, channels, &buf))
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

#[inline]
pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}
