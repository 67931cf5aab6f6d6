//! Grayscale image grids and 8-bit PNG encoding.
//!
//! Images are `f32` in `[0, 1]`. Masks on disk use 0 for background and 255
//! for lung; intermediate values are thresholded at 128 with a warning.

use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{Result, SegError};
use crate::morphology::BinaryMask;

/// Row-major `h x w` grid of intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(SegError::invalid(
                "Image::from_vec",
                format!("{} values for a {height}x{width} image", data.len()),
            ));
        }
        Ok(Image { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// 0.0 / 1.0 image of a mask.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let (h, w) = mask.shape();
        Image::from_fn(h, w, |y, x| if mask.get(y, x) { 1.0 } else { 0.0 })
    }

    /// Quantizes to 8 bits, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Decodes any PNG to 8-bit luminance. Color images are converted by
/// averaging R, G and B; alpha is ignored.
pub fn decode_gray8(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let mut out = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * channels].chunks_exact(channels) {
            let v = match channels {
                1 | 2 => px[0],
                _ => ((px[0] as u32 + px[1] as u32 + px[2] as u32 + 1) / 3) as u8,
            };
            out.push(v);
        }
    }
    Ok((h, w, out))
}

pub fn encode_gray8(height: usize, width: usize, pixels: &[u8]) -> std::result::Result<Vec<u8>, String> {
    assert_eq!(pixels.len(), height * width);
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer.write_image_data(pixels).map_err(|e| e.to_string())?;
        writer.finish().map_err(|e| e.to_string())?;
    }
    Ok(out)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| SegError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn image_err(path: &Path, msg: impl Into<String>) -> SegError {
    SegError::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn read_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    decode_gray8(&bytes).map_err(|m| image_err(path, m))
}

/// Reads an image scaled to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let (h, w, px) = read_gray8(path)?;
    Image::from_vec(h, w, px.into_iter().map(|v| v as f32 / 255.0).collect())
}

/// Reads a mask, thresholding at 128.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (h, w, px) = read_gray8(path)?;
    let grey = px.iter().filter(|&&v| v != 0 && v != 255).count();
    if grey > 0 {
        log::warn!(
            "{}: {grey} mask pixels are neither 0 nor 255; thresholding at 128",
            path.display()
        );
    }
    BinaryMask::from_bits(h, w, px.into_iter().map(|v| v >= 128).collect())
}

pub fn write_gray8(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    let bytes = encode_gray8(height, width, pixels).map_err(|m| image_err(path, m))?;
    let write_err = |source| SegError::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut f = BufWriter::new(File::create(path).map_err(write_err)?);
    f.write_all(&bytes).map_err(write_err)?;
    f.flush().map_err(write_err)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    write_gray8(path, image.height(), image.width(), &image.to_u8())
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.shape();
    let px: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray8(path, h, w, &px)
}
