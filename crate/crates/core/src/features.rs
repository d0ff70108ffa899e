//! Gradient magnitude, directional coherence, their local range enhancement
//! and the fused candidate-region image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{FloatMap, Frame};

/// Added inside the logarithm of the gradient magnitude.
pub const LOG_EPSILON: f64 = 1e-6;
/// Eigenvalue sums below this give zero coherence.
pub const COHERENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    /// Side of the averaging / structure-tensor window.
    pub gradient_window: usize,
    /// Side of the max-min range window.
    pub range_window: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            gradient_window: 3,
            range_window: 5,
        }
    }
}

/// Second-moment matrix of the Sobel responses over a window, with its
/// eigenvalues (`lambda1 >= lambda2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureTensor {
    pub sxx: f64,
    pub sxy: f64,
    pub syy: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl StructureTensor {
    pub fn from_sums(sxx: f64, sxy: f64, syy: f64) -> Self {
        let half_trace = 0.5 * (sxx + syy);
        let disc = (0.5 * (sxx - syy)).hypot(sxy);
        Self {
            sxx,
            sxy,
            syy,
            lambda1: half_trace + disc,
            lambda2: half_trace - disc,
        }
    }

    /// `((l1 - l2) / (l1 + l2))^2`, zero for a vanishing tensor.
    pub fn coherence(&self) -> f64 {
        let sum = self.lambda1 + self.lambda2;
        if sum < COHERENCE_FLOOR {
            return 0.0;
        }
        ((self.lambda1 - self.lambda2) / sum)
            .powi(2)
            .clamp(0.0, 1.0)
    }
}

/// A min-max normalized map and whether the input had no dynamic range.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMap {
    pub map: FloatMap,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedImage {
    pub frame_index: usize,
    pub map: FloatMap,
}

impl FusedImage {
    pub fn values(&self) -> &[f32] {
        self.map.values()
    }
}

/// Every intermediate image of the fusion stage for one frame.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub gm: NormalizedMap,
    pub dc: FloatMap,
    pub gm_diff: FloatMap,
    pub dc_diff: FloatMap,
    pub fused: FusedImage,
}

#[inline]
fn clamp_index(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Horizontal and vertical 3x3 Sobel responses, replicating border pixels.
pub fn sobel(frame: &Frame) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = frame.dims();
    let px = |x: isize, y: isize| frame.get(clamp_index(x, w), clamp_index(y, h)) as f64;
    let mut sx = vec![0.0; w * h];
    let mut sy = vec![0.0; w * h];
    sx.par_chunks_mut(w)
        .zip(sy.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row_x, row_y))| {
            let y = y as isize;
            for x in 0..w {
                let x = x as isize;
                let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                    - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
                let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                    - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
                row_x[x as usize] = gx;
                row_y[x as usize] = gy;
            }
        });
    (sx, sy)
}

/// Inclusive index range of a `size`-wide window centred on `c`, clipped to `[0, n)`.
#[inline]
fn window_span(c: usize, size: usize, n: usize) -> std::ops::RangeInclusive<usize> {
    let r = size / 2;
    c.saturating_sub(r)..=(c + r).min(n - 1)
}

fn min_max_normalize(values: &[f64], width: usize, height: usize) -> NormalizedMap {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if !(span > COHERENCE_FLOOR) {
        return NormalizedMap {
            map: FloatMap::zeros(width, height, 1),
            degenerate: true,
        };
    }
    let out = values.iter().map(|&v| ((v - lo) / span) as f32).collect();
    NormalizedMap {
        map: FloatMap::new(width, height, 1, out).expect("normalized values are finite"),
        degenerate: false,
    }
}

pub fn gradient_magnitude(frame: &Frame) -> NormalizedMap {
    gradient_magnitude_with(frame, FeatureParams::default().gradient_window)
}

/// Log of the windowed mean Sobel magnitude, min-max normalized over the frame.
pub fn gradient_magnitude_with(frame: &Frame, window: usize) -> NormalizedMap {
    let (w, h) = frame.dims();
    let (sx, sy) = sobel(frame);
    let mag: Vec<f64> = sx
        .iter()
        .zip(&sy)
        .map(|(gx, gy)| ((gx * gx + gy * gy) / 2.0).sqrt())
        .collect();
    let mut logged = vec![0.0; w * h];
    logged.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            let mut n = 0usize;
            for j in window_span(y, window, h) {
                for i in window_span(x, window, w) {
                    sum += mag[j * w + i];
                    n += 1;
                }
            }
            *out = (LOG_EPSILON + sum / n as f64).ln();
        }
    });
    min_max_normalize(&logged, w, h)
}

/// Structure tensor over the clipped window centred on `(x, y)`.
pub fn structure_tensor_at(
    sx: &[f64],
    sy: &[f64],
    width: usize,
    height: usize,
    x: usize,
    y: usize,
    window: usize,
) -> StructureTensor {
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for j in window_span(y, window, height) {
        for i in window_span(x, window, width) {
            let (gx, gy) = (sx[j * width + i], sy[j * width + i]);
            sxx += gx * gx;
            sxy += gx * gy;
            syy += gy * gy;
        }
    }
    StructureTensor::from_sums(sxx, sxy, syy)
}

pub fn directional_coherence(frame: &Frame) -> FloatMap {
    directional_coherence_with(frame, FeatureParams::default().gradient_window)
}

pub fn directional_coherence_with(frame: &Frame, window: usize) -> FloatMap {
    let (w, h) = frame.dims();
    let (sx, sy) = sobel(frame);
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = structure_tensor_at(&sx, &sy, w, h, x, y, window).coherence() as f32;
        }
    });
    FloatMap::new(w, h, 1, out).expect("coherence is finite")
}

pub fn local_range_diff(map: &FloatMap) -> FloatMap {
    local_range_diff_with(map, FeatureParams::default().range_window)
}

/// Max minus min over a clipped `window x window` neighbourhood of each pixel
/// (first channel). Separable: row extrema, then column extrema of those.
pub fn local_range_diff_with(map: &FloatMap, window: usize) -> FloatMap {
    let (w, h) = map.dims();
    let mut row_max = vec![0.0f32; w * h];
    let mut row_min = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for i in window_span(x, window, w) {
                let v = map.get(i, y);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            row_min[y * w + x] = lo;
            row_max[y * w + x] = hi;
        }
    }
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for j in window_span(y, window, h) {
                lo = lo.min(row_min[j * w + x]);
                hi = hi.max(row_max[j * w + x]);
            }
            *v = hi - lo;
        }
    });
    FloatMap::new(w, h, 1, out).expect("range of finite values is finite")
}

pub fn fuse(frame_index: usize, gm_diff: &FloatMap, dc_diff: &FloatMap) -> Result<FusedImage> {
    if !gm_diff.same_shape(dc_diff) {
        return Err(Error::Shape(format!(
            "GM_diff is {}x{}x{}, DC_diff is {}x{}x{}",
            gm_diff.width(),
            gm_diff.height(),
            gm_diff.channels(),
            dc_diff.width(),
            dc_diff.height(),
            dc_diff.channels()
        )));
    }
    let values = gm_diff
        .values()
        .iter()
        .zip(dc_diff.values())
        .map(|(a, b)| a + b)
        .collect();
    let map = FloatMap::new(
        gm_diff.width(),
        gm_diff.height(),
        gm_diff.channels(),
        values,
    )?;
    Ok(FusedImage { frame_index, map })
}

/// Runs the whole fusion stage on one frame.
pub fn compute_features(frame: &Frame, params: &FeatureParams) -> FeatureSet {
    let gm = gradient_magnitude_with(frame, params.gradient_window);
    let dc = directional_coherence_with(frame, params.gradient_window);
    let gm_diff = local_range_diff_with(&gm.map, params.range_window);
    let dc_diff = local_range_diff_with(&dc, params.range_window);
    let fused = fuse(frame.index, &gm_diff, &dc_diff).expect("maps share the frame shape");
    FeatureSet {
        gm,
        dc,
        gm_diff,
        dc_diff,
        fused,
    }
}
