//! 8-bit image buffers and PNG encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: PNG encoding failed: {message}")]
    Encode { path: String, message: String },
    #[error("{path}: PNG decoding failed: {message}")]
    Decode { path: String, message: String },
    #[error("{path}: unsupported PNG layout ({message})")]
    Unsupported { path: String, message: String },
    #[error("expected a {expected}-channel image, got {found} channels")]
    Channels { expected: u8, found: u8 },
}

/// Row-major, channel-interleaved 8-bit image (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn new(width: u32, height: u32, channels: u8) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width as usize * height as usize * channels as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * channels as usize).then_some(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    fn color_type(&self) -> Result<png::ColorType, ImageError> {
        match self.channels {
            1 => Ok(png::ColorType::Grayscale),
            3 => Ok(png::ColorType::Rgb),
            4 => Ok(png::ColorType::Rgba),
            other => Err(ImageError::Channels {
                expected: 3,
                found: other,
            }),
        }
    }

    /// PNG bytes; identical images always encode to identical bytes.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        self.encode(&mut out, "<memory>")?;
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        let name = path.display().to_string();
        let file = File::create(path).map_err(|source| ImageError::Io {
            path: name.clone(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        self.encode(&mut w, &name)?;
        w.flush().map_err(|source| ImageError::Io { path: name, source })
    }

    fn encode<W: Write>(&self, w: W, name: &str) -> Result<(), ImageError> {
        let enc_err = |e: png::EncodingError| ImageError::Encode {
            path: name.to_string(),
            message: e.to_string(),
        };
        let mut encoder = png::Encoder::new(w, self.width, self.height);
        encoder.set_color(self.color_type()?);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(enc_err)?;
        writer.write_image_data(&self.data).map_err(enc_err)?;
        writer.finish().map_err(enc_err)
    }

    /// Reads an 8-bit gray, RGB or RGBA PNG.
    pub fn read_png(path: &Path) -> Result<Self, ImageError> {
        let name = path.display().to_string();
        let file = File::open(path).map_err(|source| ImageError::Io {
            path: name.clone(),
            source,
        })?;
        let dec_err = |e: png::DecodingError| ImageError::Decode {
            path: name.clone(),
            message: e.to_string(),
        };
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder.read_info().map_err(dec_err)?;
        let size = reader.output_buffer_size().ok_or_else(|| ImageError::Unsupported {
            path: name.clone(),
            message: "image too large".into(),
        })?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(dec_err)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Unsupported {
                path: name,
                message: format!("bit depth {:?}", info.bit_depth),
            });
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => {
                return Err(ImageError::Unsupported {
                    path: name,
                    message: format!("color type {other:?}"),
                })
            }
        };
        buf.truncate(info.buffer_size());
        Ok(Self {
            width: info.width,
            height: info.height,
            channels,
            data: buf,
        })
    }
}
