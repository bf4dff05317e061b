use std::io::Cursor;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// Packed 8-bit RGB pixels, row-major, no alpha.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbRaster {
    pub fn black(width: usize, height: usize) -> Self {
        RgbRaster {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    /// `round(clamp(v, -1, 1) * 127.5 + 127.5)`, halves rounded up.
    pub fn from_image(image: &Image) -> Result<Self> {
        let r = image.size();
        let mut raster = RgbRaster::black(r, r);
        for y in 0..r {
            for x in 0..r {
                for c in 0..3 {
                    let v = image.pixel(c, y, x);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("pixel ({c}, {y}, {x}) is {v}")));
                    }
                    raster.data[(y * r + x) * 3 + c] = quantize(v);
                }
            }
        }
        Ok(raster)
    }

    /// `(byte - 127.5) / 127.5`; the raster must be square with a
    /// power-of-two side.
    pub fn to_image(&self) -> Result<Image> {
        if self.width != self.height {
            return Err(Error::Shape(format!(
                "image must be square, got {}x{}",
                self.width, self.height
            )));
        }
        let r = self.width;
        let mut data = vec![0.0f32; 3 * r * r];
        for y in 0..r {
            for x in 0..r {
                for c in 0..3 {
                    data[(c * r + y) * r + x] = dequantize(self.data[(y * r + x) * 3 + c]);
                }
            }
        }
        Image::new(r, data)
    }

    /// Copy `src` with its top-left corner at `(x0, y0)`.
    pub fn blit(&mut self, src: &RgbRaster, x0: usize, y0: usize) {
        assert!(x0 + src.width <= self.width && y0 + src.height <= self.height);
        for y in 0..src.height {
            let d = ((y0 + y) * self.width + x0) * 3;
            let s = y * src.width * 3;
            self.data[d..d + src.width * 3].copy_from_slice(&src.data[s..s + src.width * 3]);
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header().map_err(png_err)?;
            writer.write_image_data(&self.data).map_err(png_err)?;
            writer.finish().map_err(png_err)?;
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(png_err)?;
        let (color, depth) = {
            let info = reader.info();
            (info.color_type, info.bit_depth)
        };
        if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
            return Err(Error::Png(format!(
                "expected 8-bit RGB, found {color:?} at {depth:?}"
            )));
        }
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let frame = reader.next_frame(&mut buf).map_err(png_err)?;
        buf.truncate(frame.buffer_size());
        Ok(RgbRaster {
            width: frame.width as usize,
            height: frame.height as usize,
            data: buf,
        })
    }
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(-1.0, 1.0) * 127.5 + 127.5).round() as u8
}

pub(crate) fn dequantize(b: u8) -> f32 {
    (b as f32 - 127.5) / 127.5
}

pub fn encode_png_bytes(image: &Image) -> Result<Vec<u8>> {
    RgbRaster::from_image(image)?.encode()
}

pub fn decode_png_bytes(bytes: &[u8]) -> Result<Image> {
    RgbRaster::decode(bytes)?.to_image()
}

pub fn encode_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png_bytes(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_endpoints() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(0.0), 128);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(7.0), 255);
        assert_eq!(quantize(-3.0), 0);
    }

    #[test]
    fn byte_roundtrip_is_exact() {
        for b in 0..=255u8 {
            assert_eq!(quantize(dequantize(b)), b);
        }
    }

    #[test]
    fn rejects_non_rgb() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 2);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0, 1, 2, 3]).unwrap();
        }
        assert!(matches!(decode_png_bytes(&out), Err(Error::Png(_))));

        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0; 6]).unwrap();
        }
        assert!(matches!(decode_png_bytes(&out), Err(Error::Png(_))));
    }

    #[test]
    fn non_finite_pixels_rejected() {
        let mut data = vec![0.0; 12];
        data[5] = f32::NAN;
        let img = Image::new(2, data).unwrap();
        assert!(matches!(encode_png_bytes(&img), Err(Error::NonFinite(_))));
    }
}
