//! Multi-scale dynamic aggregation.
//!
//! For every K position `p` with match `H_p` in a reference feature map `V`,
//! the standard aggregate is `Y'(p) = sum_j w_j V(H_p + p_j)` over the 3x3
//! tap grid `p_j`. The dynamic aggregate adds a per-tap fractional offset
//! `dP_j(p)` predicted from `[F ; Y']` and samples `V` bilinearly. Per-scale
//! aggregates are then fused with a per-position softmax over relevances.
//!
//! The learned pieces (tap weights, offset convolution, final convolution)
//! are pluggable; their defaults are uniform taps, zero offsets and the
//! identity.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, mismatch, Result};
use crate::matcher::{PositionMap, RelevanceMap};
use crate::tensor::FeatureMap;

/// The fixed 3x3 tap grid, row-major: tap `j` samples `(dy, dx) = TAP_OFFSETS[j]`.
pub const TAP_OFFSETS: [(i64, i64); 9] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)];

pub const CENTER_TAP: usize = 4;

/// A dense convolution filter bank, laid out `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub data: Vec<f64>,
}

impl ConvWeights {
    pub fn new(out_channels: usize, in_channels: usize, kh: usize, kw: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_channels * in_channels * kh * kw {
            return Err(invalid(format!(
                "weight count {} does not match {out_channels}x{in_channels}x{kh}x{kw}",
                data.len()
            )));
        }
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(invalid("kernel extents must be odd"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("weights must be finite"));
        }
        Ok(ConvWeights { out_channels, in_channels, kh, kw, data })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Self {
        ConvWeights { out_channels, in_channels, kh, kw, data: vec![0.0; out_channels * in_channels * kh * kw] }
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_channels + i) * self.kh + ky) * self.kw + kx]
    }

    pub fn set(&mut self, o: usize, i: usize, ky: usize, kx: usize, v: f64) {
        self.data[((o * self.in_channels + i) * self.kh + ky) * self.kw + kx] = v;
    }

    /// "Same" cross-correlation with clamp-to-edge padding.
    pub fn apply(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels() != self.in_channels {
            return Err(mismatch(format!(
                "filter expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let (h, w) = input.dims();
        let (ry, rx) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let oc = self.out_channels;
        let mut out = vec![0.0; h * w * oc];
        out.par_chunks_mut(w * oc).enumerate().for_each(|(r, row)| {
            for c in 0..w {
                for o in 0..oc {
                    let mut acc = 0.0;
                    for i in 0..self.in_channels {
                        for ky in 0..self.kh {
                            for kx in 0..self.kw {
                                let y = r as isize + ky as isize - ry;
                                let x = c as isize + kx as isize - rx;
                                acc += self.get(o, i, ky, kx) * input.get_clamped(y, x, i);
                            }
                        }
                    }
                    row[c * oc + o] = acc;
                }
            }
        });
        FeatureMap::new(oc, h, w, out)
    }
}

/// Tap weights `w_j`: one 9-tap set shared by all channels, or one per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct TapKernel {
    taps: Vec<[f64; 9]>,
}

impl TapKernel {
    pub fn uniform() -> Self {
        TapKernel { taps: vec![[1.0 / 9.0; 9]] }
    }

    /// One-hot on the centre tap.
    pub fn delta() -> Self {
        let mut t = [0.0; 9];
        t[CENTER_TAP] = 1.0;
        TapKernel { taps: vec![t] }
    }

    pub fn shared(taps: [f64; 9]) -> Self {
        TapKernel { taps: vec![taps] }
    }

    pub fn per_channel(taps: Vec<[f64; 9]>) -> Result<Self> {
        if taps.is_empty() {
            return Err(invalid("kernel needs at least one tap set"));
        }
        Ok(TapKernel { taps })
    }

    /// From a `C x 1 x 3 x 3` filter bank.
    pub fn from_conv(w: &ConvWeights) -> Result<Self> {
        if w.in_channels != 1 || w.kh != 3 || w.kw != 3 {
            return Err(mismatch(format!(
                "tap kernel must be Cx1x3x3, got {}x{}x{}x{}",
                w.out_channels, w.in_channels, w.kh, w.kw
            )));
        }
        Self::per_channel(w.data.chunks(9).map(|c| c.try_into().unwrap()).collect())
    }

    #[inline]
    fn for_channel(&self, c: usize) -> &[f64; 9] {
        if self.taps.len() == 1 {
            &self.taps[0]
        } else {
            &self.taps[c]
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.taps.len() != 1 && self.taps.len() != channels {
            return Err(mismatch(format!("{} tap sets for {channels} channels", self.taps.len())));
        }
        Ok(())
    }

    pub fn sum(&self, channel: usize) -> f64 {
        self.for_channel(channel).iter().sum()
    }
}

/// Per-position, per-tap `(dy, dx)` displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    height: usize,
    width: usize,
    data: Vec<[f64; 2]>,
}

impl OffsetField {
    pub fn zeros(height: usize, width: usize) -> Self {
        OffsetField { height, width, data: vec![[0.0; 2]; height * width * 9] }
    }

    /// `data[(r * width + c) * 9 + tap] = [dy, dx]`.
    pub fn new(height: usize, width: usize, data: Vec<[f64; 2]>) -> Result<Self> {
        if data.len() != height * width * 9 {
            return Err(invalid(format!("offset field needs {} entries, got {}", height * width * 9, data.len())));
        }
        Ok(OffsetField { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> [f64; 2]) -> Self {
        let mut data = Vec::with_capacity(height * width * 9);
        for r in 0..height {
            for c in 0..width {
                for t in 0..9 {
                    data.push(f(r, c, t));
                }
            }
        }
        OffsetField { height, width, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, tap: usize) -> [f64; 2] {
        self.data[(row * self.width + col) * 9 + tap]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|d| d[0].is_finite() && d[1].is_finite())
    }
}

pub type OffsetCallback = dyn Fn(&FeatureMap, &FeatureMap) -> Result<OffsetField> + Send + Sync;

/// Where the dynamic offsets come from.
#[derive(Clone, Default)]
pub enum OffsetSource {
    #[default]
    Zero,
    /// `18 x (C_F + C_Y') x 3 x 3` filter over `[F ; Y']`; output channel
    /// `2j` is `dy` and `2j + 1` is `dx` for tap `j`.
    File(ConvWeights),
    Callback(Arc<OffsetCallback>),
}

impl fmt::Debug for OffsetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OffsetSource::Zero => f.write_str("Zero"),
            OffsetSource::File(w) => write!(f, "File({}x{}x{}x{})", w.out_channels, w.in_channels, w.kh, w.kw),
            OffsetSource::Callback(_) => f.write_str("Callback(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AggregationConfig {
    pub kernel: TapKernel,
    pub offset_source: OffsetSource,
    /// Linear filter applied after fusion; `None` is the identity.
    pub final_transform: Option<ConvWeights>,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig { kernel: TapKernel::uniform(), offset_source: OffsetSource::Zero, final_transform: None }
    }
}

fn check_positions(v: &FeatureMap, h: &PositionMap) -> Result<()> {
    h.check_bounds(v.height(), v.width())
}

/// Gathers `sum_j w_j sample(H_p + p_j + extra_j(p))` for every position.
fn gather(
    v: &FeatureMap,
    h: &PositionMap,
    kernel: &TapKernel,
    sample: impl Fn(usize, usize, usize, usize, usize) -> f64 + Sync,
) -> Result<FeatureMap> {
    kernel.check(v.channels())?;
    let ch = v.channels();
    let (oh, ow) = h.dims();
    let mut out = vec![0.0; oh * ow * ch];
    out.par_chunks_mut(ow * ch).enumerate().for_each(|(r, row)| {
        for c in 0..ow {
            for k in 0..ch {
                let taps = kernel.for_channel(k);
                let mut acc = 0.0;
                for (j, w) in taps.iter().enumerate() {
                    acc += w * sample(r, c, j, k, ch);
                }
                row[c * ch + k] = acc;
            }
        }
    });
    FeatureMap::new(ch, oh, ow, out)
}

/// `Y'(p) = sum_j w_j V(H_p + p_j)` with clamp-to-edge taps.
pub fn standard_aggregate(v: &FeatureMap, h: &PositionMap, kernel: &TapKernel) -> Result<FeatureMap> {
    check_positions(v, h)?;
    gather(v, h, kernel, |r, c, j, k, _| {
        let m = h.get(r, c);
        let (dy, dx) = TAP_OFFSETS[j];
        v.get_clamped(m.row as isize + dy as isize, m.col as isize + dx as isize, k)
    })
}

/// Bilinear sample of channel `k` at fractional `(y, x)`, clamped to the map.
/// Integer coordinates return the stored sample exactly.
#[inline]
pub fn bilinear(v: &FeatureMap, y: f64, x: f64, k: usize) -> f64 {
    let y = y.clamp(0.0, (v.height() - 1) as f64);
    let x = x.clamp(0.0, (v.width() - 1) as f64);
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as usize, x0 as usize);
    if fy == 0.0 && fx == 0.0 {
        return v.get(y0, x0, k);
    }
    let y1 = (y0 + 1).min(v.height() - 1);
    let x1 = (x0 + 1).min(v.width() - 1);
    let top = (1.0 - fx) * v.get(y0, x0, k) + fx * v.get(y0, x1, k);
    let bottom = (1.0 - fx) * v.get(y1, x0, k) + fx * v.get(y1, x1, k);
    (1.0 - fy) * top + fy * bottom
}

/// `Y(p) = sum_j w_j V(H_p + p_j + dP_j(p))`, sampled bilinearly.
pub fn dynamic_aggregate(
    v: &FeatureMap,
    h: &PositionMap,
    offsets: &OffsetField,
    kernel: &TapKernel,
) -> Result<FeatureMap> {
    check_positions(v, h)?;
    if offsets.dims() != h.dims() {
        return Err(mismatch(format!("offsets {:?} vs positions {:?}", offsets.dims(), h.dims())));
    }
    if !offsets.is_finite() {
        return Err(invalid("offset field contains non-finite values"));
    }
    gather(v, h, kernel, |r, c, j, k, _| {
        let m = h.get(r, c);
        let (dy, dx) = TAP_OFFSETS[j];
        let [oy, ox] = offsets.get(r, c, j);
        bilinear(v, m.row as f64 + dy as f64 + oy, m.col as f64 + dx as f64 + ox, k)
    })
}

fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    FeatureMap::from_fn(a.channels() + b.channels(), a.height(), a.width(), |r, c, k| {
        if k < a.channels() {
            a.get(r, c, k)
        } else {
            b.get(r, c, k - a.channels())
        }
    })
}

/// `dP = Conv([F ; Y'])` according to the configured source.
pub fn predict_offsets(f: &FeatureMap, y_prime: &FeatureMap, source: &OffsetSource) -> Result<OffsetField> {
    if f.dims() != y_prime.dims() {
        return Err(mismatch(format!("F {:?} vs Y' {:?}", f.dims(), y_prime.dims())));
    }
    let (h, w) = f.dims();
    match source {
        OffsetSource::Zero => Ok(OffsetField::zeros(h, w)),
        OffsetSource::File(weights) => {
            let want_in = f.channels() + y_prime.channels();
            if weights.out_channels != 18 || weights.in_channels != want_in || weights.kh != 3 || weights.kw != 3 {
                return Err(mismatch(format!(
                    "offset filter must be 18x{want_in}x3x3, got {}x{}x{}x{}",
                    weights.out_channels, weights.in_channels, weights.kh, weights.kw
                )));
            }
            let raw = weights.apply(&concat_channels(f, y_prime)?)?;
            Ok(OffsetField::from_fn(h, w, |r, c, t| [raw.get(r, c, 2 * t), raw.get(r, c, 2 * t + 1)]))
        }
        OffsetSource::Callback(cb) => {
            let field = cb(f, y_prime)?;
            if field.dims() != (h, w) {
                return Err(mismatch("callback returned an offset field of the wrong size"));
            }
            Ok(field)
        }
    }
}

/// Per-position softmax over the relevance maps.
pub fn softmax_weights(ss: &[RelevanceMap]) -> Result<Vec<RelevanceMap>> {
    let first = ss.first().ok_or_else(|| invalid("need at least one relevance map"))?;
    let (h, w) = first.dims();
    if ss.iter().any(|s| s.dims() != (h, w)) {
        return Err(mismatch("relevance maps differ in size"));
    }
    let n = ss.len();
    let mut out = vec![vec![0.0; h * w]; n];
    let mut e = vec![0.0; n];
    for p in 0..h * w {
        let m = ss.iter().map(|s| s.values()[p]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (i, s) in ss.iter().enumerate() {
            e[i] = (s.values()[p] - m).exp();
            sum += e[i];
        }
        for (o, ei) in out.iter_mut().zip(&e) {
            o[p] = ei / sum;
        }
    }
    out.into_iter().map(|v| RelevanceMap::new(h, w, v)).collect()
}

/// `Z = T(sum_i Y_i * softmax_i(S))`, returning `Z` and the softmax weights.
pub fn fuse_multiscale(
    ys: &[FeatureMap],
    ss: &[RelevanceMap],
    final_transform: Option<&ConvWeights>,
) -> Result<(FeatureMap, Vec<RelevanceMap>)> {
    if ys.is_empty() || ys.len() != ss.len() {
        return Err(invalid(format!("{} feature maps vs {} relevance maps", ys.len(), ss.len())));
    }
    let (h, w) = ys[0].dims();
    let ch = ys[0].channels();
    if ys.iter().any(|y| y.dims() != (h, w) || y.channels() != ch) {
        return Err(mismatch("aggregated feature maps differ in shape"));
    }
    if ss[0].dims() != (h, w) {
        return Err(mismatch("relevance maps must match the feature grid"));
    }
    let weights = softmax_weights(ss)?;
    let fused = FeatureMap::from_fn(ch, h, w, |r, c, k| {
        ys.iter().zip(&weights).map(|(y, s)| y.get(r, c, k) * s.get(r, c)).sum()
    })?;
    let out = match final_transform {
        Some(t) => t.apply(&fused)?,
        None => fused,
    };
    Ok((out, weights))
}
