//! Raster frames and the pixel-level transforms applied to them.

use crate::error::{DegError, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Row-major `height × width × channels` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(DegError::InvalidFrame(format!("bad shape {width}x{height}x{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(DegError::InvalidFrame(format!(
                "expected {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DegError::InvalidFrame(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self { width, height, channels, data: vec![value.clamp(0.0, 1.0); width * height * channels] }
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

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Translates content by `(dx, dy)` pixels, replicating edge pixels into
    /// the exposed border.
    pub fn shifted(&self, dx: i32, dy: i32) -> Frame {
        let (h, w) = (self.height as i32, self.width as i32);
        let mut out = self.clone();
        for y in 0..h {
            let sy = (y - dy).clamp(0, h - 1) as usize;
            for x in 0..w {
                let sx = (x - dx).clamp(0, w - 1) as usize;
                for c in 0..self.channels {
                    out.set(y as usize, x as usize, c, self.get(sy, sx, c));
                }
            }
        }
        out
    }

    /// 3×3 mean filter with edge replication.
    pub fn box_blurred(&self) -> Frame {
        let (h, w) = (self.height as i32, self.width as i32);
        let mut out = self.clone();
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    let mut acc = 0.0f32;
                    for oy in -1..=1 {
                        for ox in -1..=1 {
                            let sy = (y + oy).clamp(0, h - 1) as usize;
                            let sx = (x + ox).clamp(0, w - 1) as usize;
                            acc += self.get(sy, sx, c);
                        }
                    }
                    out.set(y as usize, x as usize, c, (acc / 9.0).clamp(0.0, 1.0));
                }
            }
        }
        out
    }

    /// Adds i.i.d. Gaussian noise and clamps back into `[0, 1]`.
    pub fn with_gaussian_noise<R: Rng + ?Sized>(&self, sigma: f32, rng: &mut R) -> Frame {
        if sigma <= 0.0 {
            return self.clone();
        }
        let normal = Normal::new(0.0f32, sigma).expect("sigma is positive and finite");
        let mut out = self.clone();
        for v in &mut out.data {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
        out
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> f32 {
        let n = self.data.len().max(1) as f32;
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f32>() / n
    }
}

/// Draws an integer offset in `[-bound, bound]`².
pub fn sample_shift<R: Rng + ?Sized>(bound: u32, rng: &mut R) -> (i32, i32) {
    let b = bound as i32;
    let dx = rng.random_range(-b..=b);
    let dy = rng.random_range(-b..=b);
    (dx, dy)
}

/// Random-shift augmentation: uniform integer translation with replicate padding.
pub fn random_shift<R: Rng + ?Sized>(frame: &Frame, bound: u32, rng: &mut R) -> Frame {
    let (dx, dy) = sample_shift(bound, rng);
    frame.shifted(dx, dy)
}
