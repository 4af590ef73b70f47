//! Planar RGB images with values in `[0, 1]`.
//!
//! Continuous coordinates put pixel `i` on `[i, i+1)`, so its centre is `i + 0.5`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// `3 x height x width`.
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in color {
            data.extend(std::iter::repeat_n(c, width * height));
        }
        Image { width, height, data }
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Usage(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    /// From interleaved 8-bit RGB.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * width * height {
            return Err(Error::Data(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                3 * width * height,
                rgb.len()
            )));
        }
        let n = width * height;
        let mut data = vec![0.0; 3 * n];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * n + i] = f32::from(px[c]) / 255.0;
            }
        }
        Ok(Image { width, height, data })
    }

    /// Interleaved 8-bit RGB, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                out.push((self.data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    /// Rounds every value to the nearest 8-bit level, making PNG storage lossless.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn mean_color(&self) -> [f32; 3] {
        let n = (self.width * self.height).max(1) as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let plane = &self.data[c * self.width * self.height..(c + 1) * self.width * self.height];
            *o = (plane.iter().map(|&v| f64::from(v)).sum::<f64>() / n) as f32;
        }
        out
    }

    /// Bilinear sample at continuous `(x, y)`; taps outside the image read `pad[c]`.
    pub fn sample(&self, c: usize, x: f64, y: f64, pad: f32) -> f32 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = (fx - x0) as f32;
        let ay = (fy - y0) as f32;
        let tap = |xi: f64, yi: f64| -> f32 {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                pad
            } else {
                self.get(c, xi as usize, yi as usize)
            }
        };
        let top = tap(x0, y0) * (1.0 - ax) + tap(x0 + 1.0, y0) * ax;
        let bottom = tap(x0, y0 + 1.0) * (1.0 - ax) + tap(x0 + 1.0, y0 + 1.0) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    /// Bilinear resize with edge clamping; output pixel centres map proportionally.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let taps = |n_out: usize, scale: f64, n_in: usize| -> Vec<(usize, usize, f32)> {
            (0..n_out)
                .map(|o| {
                    let f = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                    let i0 = f.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    (i0, i1, (f - i0 as f64) as f32)
                })
                .collect()
        };
        let tx = taps(width, sx, self.width);
        let ty = taps(height, sy, self.height);
        let mut out = Image::filled(width, height, [0.0; 3]);
        for c in 0..3 {
            for (y, &(y0, y1, ay)) in ty.iter().enumerate() {
                for (x, &(x0, x1, ax)) in tx.iter().enumerate() {
                    let top = self.get(c, x0, y0) * (1.0 - ax) + self.get(c, x1, y0) * ax;
                    let bot = self.get(c, x0, y1) * (1.0 - ax) + self.get(c, x1, y1) * ax;
                    out.set(c, x, y, top * (1.0 - ay) + bot * ay);
                }
            }
        }
        out
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[3, self.height, self.width],
            self.data.iter().map(|&v| T::lit(f64::from(v))).collect(),
        )
        .expect("image dims positive")
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        Image::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
    }

    /// PNG bytes of the 8-bit rendering.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer sized to image");
        buf.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: "<memory>".into(),
                message: e.to_string(),
            })?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_round_trip() {
        let rgb: Vec<u8> = (0..27).map(|i| (i * 9) as u8).collect();
        let img = Image::from_rgb8(3, 3, &rgb).unwrap();
        assert_eq!(img.to_rgb8(), rgb);
    }

    #[test]
    fn sample_at_centres_is_exact() {
        let img = Image::from_planar(2, 1, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(img.sample(0, 0.5, 0.5, 9.0), 0.0);
        assert_eq!(img.sample(0, 1.5, 0.5, 9.0), 1.0);
        assert_eq!(img.sample(0, 1.0, 0.5, 9.0), 0.5);
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = Image::filled(7, 5, [0.25, 0.5, 0.75]);
        assert_eq!(img.resize(7, 5), img);
        let r = img.resize(13, 3);
        assert!(r.data()[..39].iter().all(|&v| v == 0.25));
    }
}
