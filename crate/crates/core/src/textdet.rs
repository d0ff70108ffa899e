//! Pixel/link text segmentation: ground-truth labelling, the adaptive weighted
//! loss with analytic gradients, and decoding of score maps into boxes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{FloatMap, Rect};

/// Neighbour offsets in channel order E, NE, N, NW, W, SW, S, SE (y grows down).
pub const NEIGHBORS: [(i32, i32); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPSILON: f64 = 1e-7;

/// Channel pointing back from the `k`-th neighbour.
#[inline]
pub fn opposite(k: usize) -> usize {
    (k + 4) % 8
}

fn neighbor(x: usize, y: usize, k: usize, width: usize, height: usize) -> Option<(usize, usize)> {
    let (dx, dy) = NEIGHBORS[k];
    let nx = x as i64 + dx as i64;
    let ny = y as i64 + dy as i64;
    (nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height)
        .then_some((nx as usize, ny as usize))
}

/// Predicted text probabilities (1 channel) and link probabilities (8 channels).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkScoreMaps {
    pixel: FloatMap,
    links: FloatMap,
}

impl LinkScoreMaps {
    pub fn new(pixel: FloatMap, links: FloatMap) -> Result<Self> {
        if pixel.channels() != 1 || links.channels() != 8 {
            return Err(Error::Shape(format!(
                "expected 1 pixel channel and 8 link channels, got {} and {}",
                pixel.channels(),
                links.channels()
            )));
        }
        if pixel.dims() != links.dims() {
            return Err(Error::Shape(format!(
                "pixel map is {:?} but link map is {:?}",
                pixel.dims(),
                links.dims()
            )));
        }
        for v in pixel.values().iter().chain(links.values()) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Range(*v));
            }
        }
        Ok(Self { pixel, links })
    }

    pub fn read_f32m(
        pixel: impl AsRef<std::path::Path>,
        links: impl AsRef<std::path::Path>,
    ) -> Result<Self> {
        Self::new(FloatMap::read_f32m(pixel)?, FloatMap::read_f32m(links)?)
    }

    pub fn pixel(&self) -> &FloatMap {
        &self.pixel
    }

    pub fn links(&self) -> &FloatMap {
        &self.links
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixel.dims()
    }

    /// Stand-in for a trained network: pixel scores are the crop's values over its maximum,
    /// link scores the similarity `1 - |p_i - p_j|` of neighbouring pixel scores.
    pub fn baseline_from_fused(crop: &FloatMap) -> Self {
        let (w, h) = crop.dims();
        let top = crop.max_value();
        let pixel = FloatMap::from_fn(w, h, |x, y| {
            if top > 0.0 {
                (crop.get(x, y) / top).clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
        let mut links = vec![0.0f32; w * h * 8];
        for y in 0..h {
            for x in 0..w {
                for k in 0..8 {
                    if let Some((nx, ny)) = neighbor(x, y, k, w, h) {
                        links[(y * w + x) * 8 + k] =
                            1.0 - (pixel.get(x, y) - pixel.get(nx, ny)).abs();
                    }
                }
            }
        }
        let links = FloatMap::new(w, h, 8, links).expect("sizes agree");
        Self { pixel, links }
    }
}

/// Per-pixel labels, link labels and instance-balanced weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMaps {
    pub width: usize,
    pub height: usize,
    pub y_pixel: Vec<bool>,
    /// Indexed `(y * width + x) * 8 + k`.
    pub y_link: Vec<bool>,
    pub w: Vec<f64>,
    /// Instance id of each positive pixel (index into the box list).
    pub instance: Vec<Option<usize>>,
}

impl GroundTruthMaps {
    pub fn positives(&self) -> usize {
        self.y_pixel.iter().filter(|&&p| p).count()
    }

    /// Default balance ratio: negatives over positives, 0 without positives.
    pub fn negative_ratio(&self) -> f64 {
        let pos = self.positives();
        if pos == 0 {
            0.0
        } else {
            (self.y_pixel.len() - pos) as f64 / pos as f64
        }
    }
}

/// Pixels inside exactly one box are positive; links join same-instance
/// neighbours; each instance carries the same total weight.
pub fn label_ground_truth(boxes: &[Rect], dims: (usize, usize)) -> GroundTruthMaps {
    let (width, height) = dims;
    let n = width * height;
    let mut cover = vec![0u32; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (id, b) in boxes.iter().enumerate() {
        let Some(r) = b.clamp_to(width, height) else {
            continue;
        };
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                let i = y as usize * width + x as usize;
                cover[i] += 1;
                owner[i] = Some(id);
            }
        }
    }
    let instance: Vec<Option<usize>> = (0..n)
        .map(|i| if cover[i] == 1 { owner[i] } else { None })
        .collect();
    let y_pixel: Vec<bool> = instance.iter().map(Option::is_some).collect();

    let mut y_link = vec![false; n * 8];
    for y in 0..height {
        for x in 0..width {
            let Some(id) = instance[y * width + x] else {
                continue;
            };
            for k in 0..8 {
                if let Some((nx, ny)) = neighbor(x, y, k, width, height) {
                    y_link[(y * width + x) * 8 + k] = instance[ny * width + nx] == Some(id);
                }
            }
        }
    }

    let mut areas = vec![0usize; boxes.len()];
    for id in instance.iter().flatten() {
        areas[*id] += 1;
    }
    let total: usize = areas.iter().sum();
    let live = areas.iter().filter(|&&a| a > 0).count();
    let w = instance
        .iter()
        .map(|id| match id {
            Some(m) => total as f64 / (live as f64 * areas[*m] as f64),
            None => 0.0,
        })
        .collect();

    GroundTruthMaps {
        width,
        height,
        y_pixel,
        y_link,
        w,
        instance,
    }
}

/// Weight on the pixel term, `min(1, 1/ln(10t + 2))` for epochs `t >= 1`.
pub fn alpha_schedule(t: u64) -> Result<f64> {
    if t < 1 {
        return Err(Error::Domain("epoch must be at least 1".into()));
    }
    Ok((1.0 / (10.0 * t as f64 + 2.0).ln()).min(1.0))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

fn cross_entropy(p: f64, y: bool) -> f64 {
    let p = clamp_prob(p);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// d CE / d p at the clamped probability.
fn cross_entropy_grad(p: f64, y: bool) -> f64 {
    let p = clamp_prob(p);
    let y = if y { 1.0 } else { 0.0 };
    (p - y) / (p * (1.0 - p))
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!(
            "{what} has {got} entries, expected {want}"
        )));
    }
    Ok(())
}

/// Weighted pixel cross-entropy scaled by `(1 + r)^(-s_exp)`, with its
/// gradient over `pred` (row-major, one value per pixel).
pub fn pixel_loss(
    pred: &[f64],
    gt: &GroundTruthMaps,
    r: f64,
    s_exp: f64,
) -> Result<(f64, Vec<f64>)> {
    check_len("pixel prediction", pred.len(), gt.width * gt.height)?;
    if r < 0.0 || s_exp < 0.0 {
        return Err(Error::Domain("r and s_exp must be nonnegative".into()));
    }
    let scale = (1.0 + r).powf(-s_exp) / gt.w.iter().sum::<f64>().max(1.0);
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, (&p, &w)) in pred.iter().zip(&gt.w).enumerate() {
        if w == 0.0 {
            continue;
        }
        let y = gt.y_pixel[i];
        value += w * cross_entropy(p, y);
        grad[i] = scale * w * cross_entropy_grad(p, y);
    }
    Ok((scale * value, grad))
}

/// Positive- and negative-link cross-entropy, each normalised by its total
/// weight. `pred` is indexed like [`GroundTruthMaps::y_link`].
pub fn link_loss(pred: &[f64], gt: &GroundTruthMaps) -> Result<(f64, Vec<f64>)> {
    check_len("link prediction", pred.len(), gt.width * gt.height * 8)?;
    let (mut pos_sum, mut neg_sum) = (0.0, 0.0);
    for (j, &y) in gt.y_link.iter().enumerate() {
        let w = gt.w[j / 8];
        if y {
            pos_sum += w;
        } else {
            neg_sum += w;
        }
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.len()];
    let (mut pos, mut neg) = (0.0, 0.0);
    for (j, (&p, &y)) in pred.iter().zip(&gt.y_link).enumerate() {
        let w = gt.w[j / 8];
        if w == 0.0 {
            continue;
        }
        let norm = if y { pos_sum } else { neg_sum };
        if y {
            pos += w * cross_entropy(p, true);
        } else {
            neg += w * cross_entropy(p, false);
        }
        grad[j] = w * cross_entropy_grad(p, y) / norm;
    }
    if pos_sum > 0.0 {
        value += pos / pos_sum;
    }
    if neg_sum > 0.0 {
        value += neg / neg_sum;
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Epoch, absent when alpha was given directly.
    pub t: Option<u64>,
    pub alpha: f64,
    pub l_pixel: f64,
    pub l_link: f64,
    pub total: f64,
    #[serde(skip)]
    pub grad_pixel: Vec<f64>,
    #[serde(skip)]
    pub grad_link: Vec<f64>,
}

/// `2 alpha L_pixel + (1 - alpha) L_link` with a fixed alpha.
pub fn total_loss_with_alpha(
    pixel: &[f64],
    links: &[f64],
    gt: &GroundTruthMaps,
    alpha: f64,
    r: f64,
    s_exp: f64,
) -> Result<LossBreakdown> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let (l_pixel, gp) = pixel_loss(pixel, gt, r, s_exp)?;
    let (l_link, gl) = link_loss(links, gt)?;
    let a = 2.0 * alpha;
    let b = 1.0 - alpha;
    Ok(LossBreakdown {
        t: None,
        alpha,
        l_pixel,
        l_link,
        total: a * l_pixel + b * l_link,
        grad_pixel: gp.into_iter().map(|g| a * g).collect(),
        grad_link: gl.into_iter().map(|g| b * g).collect(),
    })
}

/// Loss at epoch `t`.
pub fn total_loss(
    pixel: &[f64],
    links: &[f64],
    gt: &GroundTruthMaps,
    t: u64,
    r: f64,
    s_exp: f64,
) -> Result<LossBreakdown> {
    let mut out = total_loss_with_alpha(pixel, links, gt, alpha_schedule(t)?, r, s_exp)?;
    out.t = Some(t);
    Ok(out)
}

/// Loss on score maps, converting them to double precision first.
pub fn total_loss_maps(
    scores: &LinkScoreMaps,
    gt: &GroundTruthMaps,
    t: u64,
    r: f64,
    s_exp: f64,
) -> Result<LossBreakdown> {
    if scores.dims() != (gt.width, gt.height) {
        return Err(Error::Shape(format!(
            "score maps are {:?}, ground truth is {:?}",
            scores.dims(),
            (gt.width, gt.height)
        )));
    }
    let pixel: Vec<f64> = scores.pixel.values().iter().map(|&v| v as f64).collect();
    let links: Vec<f64> = scores.links.values().iter().map(|&v| v as f64).collect();
    total_loss(&pixel, &links, gt, t, r, s_exp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Compares the analytic gradient returned by `loss_fn` with central
/// differences, coordinate by coordinate.
pub fn grad_check<F>(loss_fn: F, inputs: &[f64], step: f64, tolerance: f64) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    if step <= 0.0 {
        return Err(Error::Domain("step must be positive".into()));
    }
    let (value, analytic) = loss_fn(inputs);
    if !value.is_finite() {
        return Err(Error::Numerical(None));
    }
    check_len("analytic gradient", analytic.len(), inputs.len())?;
    let errors: Vec<Result<f64>> = (0..inputs.len())
        .into_par_iter()
        .map(|i| {
            let mut x = inputs.to_vec();
            x[i] = inputs[i] + step;
            let up = loss_fn(&x).0;
            x[i] = inputs[i] - step;
            let down = loss_fn(&x).0;
            if !up.is_finite() || !down.is_finite() || !analytic[i].is_finite() {
                return Err(Error::Numerical(Some(i)));
            }
            let numeric = (up - down) / (2.0 * step);
            Ok((analytic[i] - numeric).abs() / numeric.abs().max(1e-8))
        })
        .collect();
    let mut worst = (0.0, 0);
    for (i, e) in errors.into_iter().enumerate() {
        let e = e?;
        if e > worst.0 {
            worst = (e, i);
        }
    }
    Ok(GradCheck {
        max_relative_error: worst.0,
        worst_index: worst.1,
        passed: worst.0 <= tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub theta_pixel: f64,
    pub theta_link: f64,
    pub min_area: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            theta_pixel: 0.5,
            theta_link: 0.5,
            min_area: 6,
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Thresholds pixels, joins positive neighbours whose link in either
/// direction passes `theta_link`, and returns component boxes sorted by
/// `(y, x, w, h)`.
pub fn decode_links(
    scores: &LinkScoreMaps,
    theta_pixel: f64,
    theta_link: f64,
    min_area: usize,
) -> Vec<Rect> {
    let (w, h) = scores.dims();
    let positive: Vec<bool> = scores
        .pixel
        .values()
        .iter()
        .map(|&v| v as f64 >= theta_pixel)
        .collect();
    let links = scores.links.values();
    let mut parent: Vec<usize> = (0..w * h).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !positive[i] {
                continue;
            }
            for k in 0..8 {
                let Some((nx, ny)) = neighbor(x, y, k, w, h) else {
                    continue;
                };
                let j = ny * w + nx;
                if !positive[j] {
                    continue;
                }
                let strength = links[i * 8 + k].max(links[j * 8 + opposite(k)]) as f64;
                if strength >= theta_link {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    // (x0, y0, x1, y1, count) per root
    let mut extents: Vec<Option<(usize, usize, usize, usize, usize)>> = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !positive[i] {
                continue;
            }
            let root = find(&mut parent, i);
            let e = extents[root].get_or_insert((x, y, x, y, 0));
            e.0 = e.0.min(x);
            e.1 = e.1.min(y);
            e.2 = e.2.max(x);
            e.3 = e.3.max(y);
            e.4 += 1;
        }
    }
    let mut boxes: Vec<Rect> = extents
        .into_iter()
        .flatten()
        .filter(|e| e.4 >= min_area)
        .map(|(x0, y0, x1, y1, _)| Rect {
            x: x0 as i32,
            y: y0 as i32,
            w: (x1 - x0 + 1) as i32,
            h: (y1 - y0 + 1) as i32,
        })
        .collect();
    boxes.sort_by_key(|r| (r.y, r.x, r.w, r.h));
    boxes
}
