//! Dense containers, bicubic resampling and the patch-descriptor extractor.
//!
//! Both [`Image`] and [`FeatureMap`] store their samples position-major with
//! the channel index innermost, so the feature vector of one position is a
//! contiguous slice. That is the access pattern every matcher kernel uses.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// A 1- or 3-channel raster with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("image must have 1 or 3 channels, got {channels}")));
        }
        if data.len() != channels * height * width {
            return Err(invalid(format!(
                "image data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("image contains non-finite values"));
        }
        Ok(Image { channels, height, width, data })
    }

    /// Builds an image by evaluating `f(row, col, channel)` at every sample.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Image::new(channels, height, width, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Sample with coordinates clamped to the image rectangle.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize, channel: usize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c, channel)
    }

    /// Copy of the rectangle starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width || height == 0 || width == 0 {
            return Err(invalid(format!("crop {height}x{width}@({row},{col}) outside {}x{}", self.height, self.width)));
        }
        Image::from_fn(self.channels, height, width, |r, c, ch| self.get(row + r, col + c, ch))
    }

    /// Views the raw samples as a feature map with one channel per image channel.
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap { channels: self.channels, height: self.height, width: self.width, data: self.data.clone() }
    }
}

/// A dense `C x H x W` grid of real-valued feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("feature map needs at least one channel"));
        }
        if data.len() != channels * height * width {
            return Err(invalid(format!(
                "feature data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("feature map contains non-finite values"));
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        FeatureMap::new(channels, height, width, data)
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

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Feature vector at `(row, col)`.
    #[inline]
    pub fn vector(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize, channel: usize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c, channel)
    }

    /// Converts back to an image, clamping samples into `[0, 1]`.
    pub fn to_image(&self) -> Result<Image> {
        Image::new(self.channels, self.height, self.width, self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// Settings for the stand-in dense patch descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub patch_size: usize,
    pub mean_subtract: bool,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig { patch_size: 7, mean_subtract: true }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size.is_multiple_of(2) {
            return Err(invalid(format!("patch size must be odd and >= 1, got {}", self.patch_size)));
        }
        Ok(())
    }
}

/// Catmull-Rom cubic convolution kernel (`a = -0.5`).
#[inline]
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// For each output index along one axis: the source taps and their weights.
/// When shrinking, the kernel is stretched by the scale factor so every
/// source pixel contributes (antialiased, as in `imresize`).
fn axis_taps(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            for i in lo..=hi {
                let w = cubic_weight((i as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, in_len as isize - 1) as usize;
                match taps.iter_mut().find(|t| t.0 == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Separable Catmull-Rom bicubic resize with clamp-to-edge boundaries,
/// antialiased when shrinking.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if img.height == 0 || img.width == 0 {
        return Err(invalid("cannot resize a zero-sized image"));
    }
    if out_h == 0 || out_w == 0 {
        return Err(invalid(format!("output size {out_h}x{out_w} must be positive")));
    }
    let ch = img.channels;
    let col_taps = axis_taps(img.width, out_w);
    let row_taps = axis_taps(img.height, out_h);

    // horizontal pass: in_h x out_w
    let mut tmp = vec![0.0; img.height * out_w * ch];
    tmp.par_chunks_mut(out_w * ch).enumerate().for_each(|(r, row)| {
        for (c, taps) in col_taps.iter().enumerate() {
            for k in 0..ch {
                row[c * ch + k] = taps.iter().map(|&(i, w)| w * img.get(r, i, k)).sum();
            }
        }
    });

    let mut out = vec![0.0; out_h * out_w * ch];
    out.par_chunks_mut(out_w * ch).enumerate().for_each(|(r, row)| {
        let taps = &row_taps[r];
        for c in 0..out_w {
            for k in 0..ch {
                row[c * ch + k] = taps.iter().map(|&(i, w)| w * tmp[(i * out_w + c) * ch + k]).sum();
            }
        }
    });
    Image::new(ch, out_h, out_w, out)
}

/// Rounds `len * factor` half away from zero.
pub fn scaled_len(len: usize, factor: f64) -> usize {
    (len as f64 * factor).round() as usize
}

/// Builds `[Ref_0, .., Ref_{n-1}]` where `Ref_i` is `ref_img` bicubically
/// resized by `k^i`. Every level must be at least `min_dim` on each side.
pub fn make_ref_pyramid(ref_img: &Image, k: f64, n: usize, min_dim: usize) -> Result<Vec<Image>> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(invalid(format!("pyramid factor k must be in (0, 1], got {k}")));
    }
    if n == 0 {
        return Err(invalid("pyramid needs at least one level"));
    }
    (0..n)
        .map(|i| {
            let f = k.powi(i as i32);
            let h = scaled_len(ref_img.height, f);
            let w = scaled_len(ref_img.width, f);
            if h < min_dim.max(1) || w < min_dim.max(1) {
                return Err(Error::LevelTooSmall { level: i, height: h, width: w, min_dim });
            }
            if i == 0 {
                Ok(ref_img.clone())
            } else {
                bicubic_resize(ref_img, h, w)
            }
        })
        .collect()
}

/// Dense descriptors: at every pixel, the clamp-padded `patch_size^2`
/// neighbourhood flattened row-major (channel innermost), optionally with
/// the descriptor's own mean subtracted.
pub fn extract_descriptors(img: &Image, cfg: &DescriptorConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    if img.height < cfg.patch_size || img.width < cfg.patch_size {
        return Err(invalid(format!("image {}x{} smaller than patch size {}", img.height, img.width, cfg.patch_size)));
    }
    let p = cfg.patch_size;
    let half = (p / 2) as isize;
    let ch = img.channels;
    let dim = ch * p * p;
    let mut data = vec![0.0; img.height * img.width * dim];
    data.par_chunks_mut(img.width * dim).enumerate().for_each(|(r, row)| {
        for c in 0..img.width {
            let v = &mut row[c * dim..(c + 1) * dim];
            let mut i = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    for k in 0..ch {
                        v[i] = img.get_clamped(r as isize + dy, c as isize + dx, k);
                        i += 1;
                    }
                }
            }
            if cfg.mean_subtract {
                let mean = v.iter().sum::<f64>() / dim as f64;
                v.iter_mut().for_each(|x| *x -= mean);
            }
        }
    });
    FeatureMap::new(dim, img.height, img.width, data)
}
