//! Planar `[C, H, W]` images with intensities in `[0, 1]`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{DynamicImage, GenericImageView};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidInput("image dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, fill: &[f64]) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            data.extend(std::iter::repeat_n(fill[c], height * width));
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape().to_vec(), self.data.clone()).expect("image buffer matches shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [c, h, w] => Self::new(c, h, w, t.data().to_vec()),
            _ => Err(Error::Shape(format!("expected [C, H, W], got {:?}", t.shape()))),
        }
    }

    /// Per-channel mean intensity.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = self.pixels() as f64;
        self.data
            .chunks(self.pixels())
            .map(|ch| ch.iter().sum::<f64>() / n)
            .collect()
    }

    /// Reads an 8-bit PNG or PGM/PNM file. Grayscale sources give one channel,
    /// everything else is converted to RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let mut data = vec![0.0; 3 * h * w];
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    data[(c * h + y as usize) * w + x as usize] = p.0[c] as f64 / 255.0;
                }
            }
            Self::new(3, h, w, data).expect("decoded buffer")
        } else {
            let gray = img.to_luma8();
            let data = gray.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            Self::new(1, h, w, data).expect("decoded buffer")
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.push(quant(self.get(c, y, x)));
                }
            }
        }
        out
    }

    /// Writes an 8-bit grayscale (1 channel) or RGB (3 channel) PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::InvalidInput(format!("cannot write {c}-channel PNG"))),
        };
        let file = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.to_bytes())?;
        Ok(())
    }

    /// Quantizes to 8 bits and back, matching a save/load round trip.
    pub fn quantized(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        Self { data, ..*self }
    }
}

/// Writes a boolean mask as a 1-bit grayscale PNG (set pixels white).
pub fn save_mask_png(mask: &[bool], height: usize, width: usize, path: &Path) -> Result<()> {
    if mask.len() != height * width {
        return Err(Error::Shape("mask size does not match dimensions".into()));
    }
    let stride = width.div_ceil(8);
    let mut packed = vec![0u8; stride * height];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&packed)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let img = Image::new(1, 3, 4, data).unwrap().quantized();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), img);
    }

    #[test]
    fn reads_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        std::fs::write(&path, b"P5\n2 1\n255\n\x00\xff").unwrap();
        let img = Image::load(&path).unwrap();
        assert_eq!(img.shape(), [1, 1, 2]);
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn mask_png_decodes_to_same_pattern() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        save_mask_png(&mask, 3, 10, &path).unwrap();
        let back = Image::load(&path).unwrap();
        let decoded: Vec<bool> = back.data().iter().map(|&v| v > 0.5).collect();
        assert_eq!(decoded, mask);
    }

    #[test]
    fn rejects_bad_buffer() {
        assert!(Image::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 2, 2, vec![]).is_err());
    }
}
