//! Dense float images shared by every stage of the pipeline.
//!
//! Pixels are stored row-major, top row first, channels interleaved. Values
//! are linear; nothing in the crate applies a transfer function.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::dims(format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
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

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Extracts a single channel as a one-channel image.
    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Quantizes to 8 bits with round-half-up after clamping to [0, 1].
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Self::from_vec(width, height, channels, data)
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers sit at
    /// `i + 0.5`), clamped to the edge. When `mask` is given only masked-in
    /// pixels contribute and the weights are renormalized. Returns `false`
    /// when no valid tap exists.
    pub fn sample_bilinear(&self, px: f64, py: f64, mask: Option<&[bool]>, out: &mut [f64]) -> bool {
        let fx = px - 0.5;
        let fy = py - 0.5;
        let x0f = fx.floor();
        let y0f = fy.floor();
        let tx = fx - x0f;
        let ty = fy - y0f;
        let clamp_x = |v: f64| v.clamp(0.0, (self.width - 1) as f64) as usize;
        let clamp_y = |v: f64| v.clamp(0.0, (self.height - 1) as f64) as usize;
        let xs = [clamp_x(x0f), clamp_x(x0f + 1.0)];
        let ys = [clamp_y(y0f), clamp_y(y0f + 1.0)];
        let wx = [1.0 - tx, tx];
        let wy = [1.0 - ty, ty];

        out.iter_mut().for_each(|v| *v = 0.0);
        let mut wsum = 0.0;
        for (j, &y) in ys.iter().enumerate() {
            for (i, &x) in xs.iter().enumerate() {
                let w = wx[i] * wy[j];
                let idx = y * self.width + x;
                if let Some(m) = mask {
                    if !m[idx] {
                        continue;
                    }
                }
                if w == 0.0 {
                    continue;
                }
                wsum += w;
                for (c, o) in out.iter_mut().enumerate() {
                    *o += w * self.data[idx * self.channels + c];
                }
            }
        }
        if wsum <= 0.0 {
            // every weighted tap masked out: fall back to the nearest valid tap
            let nx = clamp_x((px - 0.5).round());
            let ny = clamp_y((py - 0.5).round());
            let idx = ny * self.width + nx;
            if mask.is_none_or(|m| m[idx]) {
                out.copy_from_slice(self.pixel(idx));
                return true;
            }
            return false;
        }
        out.iter_mut().for_each(|v| *v /= wsum);
        true
    }
}

#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_round_half_up() {
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(1.7), 255);
        assert_eq!(quantize_u8(-0.2), 0);
    }

    #[test]
    fn bilinear_at_center_is_exact() {
        let img = Image::from_fn(4, 4, 1, |x, y, _| (x + 10 * y) as f64);
        let mut out = [0.0];
        assert!(img.sample_bilinear(2.5, 1.5, None, &mut out));
        assert_eq!(out[0], 12.0);
        assert!(img.sample_bilinear(2.0, 1.5, None, &mut out));
        assert!((out[0] - 11.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_mask_renormalizes() {
        let img = Image::from_fn(2, 1, 1, |x, _, _| if x == 0 { 1.0 } else { 0.0 });
        let mask = [true, false];
        let mut out = [0.0];
        assert!(img.sample_bilinear(1.0, 0.5, Some(&mask), &mut out));
        assert_eq!(out[0], 1.0);
        let none = [false, false];
        assert!(!img.sample_bilinear(1.0, 0.5, Some(&none), &mut out));
    }

    #[test]
    fn from_vec_checks_len() {
        assert!(Image::from_vec(2, 2, 3, vec![0.0; 11]).is_err());
    }
}
