//! Bayesian skin classification on fused values: cluster-mode priors,
//! window-mode likelihoods, grouping into components, and the window-level
//! re-selection of components.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FusedImage;
use crate::imaging::Rect;
use crate::kmeans::{kmeans_1d, KMeansConfig};
use crate::temporal::{Cluster, ClusterPartition};

pub const HISTOGRAM_BINS: usize = 256;
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Centre of the most populated of `bins` equal bins over `[0, upper]`.
/// Ties resolve to the lower bin; `None` for an empty sample.
pub fn histogram_mode(
    values: impl IntoIterator<Item = f64>,
    upper: f64,
    bins: usize,
) -> Option<(f64, usize)> {
    let mut counts = vec![0usize; bins];
    let mut any = false;
    for v in values {
        counts[bin_of(v, upper, bins)] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    let (best, &count) =
        counts.iter().enumerate().fold(
            (0, &0),
            |acc, (i, c)| if *c > *acc.1 { (i, c) } else { acc },
        );
    let width = if upper > 0.0 {
        upper / bins as f64
    } else {
        0.0
    };
    Some(((best as f64 + 0.5) * width, count))
}

#[inline]
fn bin_of(v: f64, upper: f64, bins: usize) -> usize {
    if upper <= 0.0 {
        return 0;
    }
    ((v / upper * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// `P(skin | window)` for a likelihood and a prior; 0 when both terms vanish.
pub fn posterior(likelihood: f64, prior: f64) -> f64 {
    let num = likelihood * prior;
    let den = num + (1.0 - likelihood) * (1.0 - prior);
    if den <= 0.0 {
        0.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkinPriors {
    pub p_skin: f64,
    pub p_not: f64,
    pub mode_avg: f64,
    pub mode_max: f64,
    /// Both modes were zero; `p_skin` fell back to 0.5.
    pub degenerate: bool,
}

impl SkinPriors {
    pub fn from_modes(mode_avg: f64, mode_max: f64) -> Self {
        let sum = mode_avg + mode_max;
        let (p_skin, degenerate) = if sum > 0.0 {
            (mode_avg / sum, false)
        } else {
            (0.5, true)
        };
        Self {
            p_skin,
            p_not: 1.0 - p_skin,
            mode_avg,
            mode_max,
            degenerate,
        }
    }

    pub fn fixed(p_skin: f64) -> Self {
        Self {
            p_skin,
            p_not: 1.0 - p_skin,
            mode_avg: p_skin,
            mode_max: 1.0 - p_skin,
            degenerate: false,
        }
    }
}

/// Priors from the histogram modes of the fused values in the Avg and Max clusters.
pub fn skin_priors(partition: &ClusterPartition, fused: &FusedImage) -> Result<SkinPriors> {
    check_cover(partition, fused)?;
    let upper = fused.map.max_value() as f64;
    let mode = |c: Cluster| {
        histogram_mode(
            partition.members(c).map(|i| fused.values()[i] as f64),
            upper,
            HISTOGRAM_BINS,
        )
        .map_or(0.0, |(m, _)| m)
    };
    Ok(SkinPriors::from_modes(
        mode(Cluster::Avg),
        mode(Cluster::Max),
    ))
}

fn check_cover(partition: &ClusterPartition, fused: &FusedImage) -> Result<()> {
    if partition.labels.len() != fused.values().len() {
        return Err(Error::Shape(format!(
            "partition covers {} pixels, fused image has {}",
            partition.labels.len(),
            fused.values().len()
        )));
    }
    Ok(())
}

/// How the window likelihood `P(window | skin)` is read off the 3x3 window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodRule {
    /// Modal non-zero value divided by the window pixel count.
    #[default]
    ModeValue,
    /// Occurrences of the modal non-zero value divided by the window pixel count.
    ModeFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkinStage {
    PixelLevel,
    ComponentLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinMask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
    pub source: SkinStage,
}

impl SkinMask {
    pub fn empty(width: usize, height: usize, source: SkinStage) -> Self {
        Self {
            width,
            height,
            pixels: vec![false; width * height],
            source,
        }
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }
}

/// `P(window | skin)` for the 3x3 window centred on `(x, y)`.
pub fn window_likelihood(
    fused: &FusedImage,
    x: usize,
    y: usize,
    upper: f64,
    rule: LikelihoodRule,
) -> f64 {
    let (w, h) = fused.map.dims();
    let mut nonzero = Vec::with_capacity(9);
    let mut n = 0usize;
    for j in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for i in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            n += 1;
            let v = fused.map.get(i, j) as f64;
            if v != 0.0 {
                nonzero.push(v);
            }
        }
    }
    match histogram_mode(nonzero, upper, HISTOGRAM_BINS) {
        None => 0.0,
        Some((value, count)) => match rule {
            LikelihoodRule::ModeValue => value / n as f64,
            LikelihoodRule::ModeFrequency => count as f64 / n as f64,
        },
    }
    .clamp(0.0, 1.0)
}

/// Pixel-level skin mask: each Max and each Avg pixel is skin when its window
/// posterior reaches 0.5; the two per-cluster results are united.
pub fn classify_skin_pixels(
    fused: &FusedImage,
    partition: &ClusterPartition,
    priors: &SkinPriors,
    rule: LikelihoodRule,
) -> Result<SkinMask> {
    classify_skin_pixels_at(fused, partition, priors, rule, DECISION_THRESHOLD)
}

/// [`classify_skin_pixels`] with a custom posterior threshold.
pub fn classify_skin_pixels_at(
    fused: &FusedImage,
    partition: &ClusterPartition,
    priors: &SkinPriors,
    rule: LikelihoodRule,
    threshold: f64,
) -> Result<SkinMask> {
    check_cover(partition, fused)?;
    let (w, h) = fused.map.dims();
    let upper = fused.map.max_value() as f64;
    let classify = |cluster: Cluster| -> Vec<usize> {
        partition
            .members(cluster)
            .filter(|&i| {
                let l = window_likelihood(fused, i % w, i / w, upper, rule);
                posterior(l, priors.p_skin) >= threshold
            })
            .collect()
    };
    let mut mask = SkinMask::empty(w, h, SkinStage::PixelLevel);
    for i in classify(Cluster::Max)
        .into_iter()
        .chain(classify(Cluster::Avg))
    {
        mask.pixels[i] = true;
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinComponent {
    pub id: usize,
    pub frame_index: usize,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub bbox: Rect,
    pub mean_fused: f64,
}

impl SkinComponent {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn summary(&self) -> ComponentSummary {
        ComponentSummary {
            id: self.id,
            bbox: self.bbox,
            area: self.area(),
            mean_fused: self.mean_fused,
        }
    }
}

/// JSON form of a component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub id: usize,
    pub bbox: Rect,
    pub area: usize,
    pub mean_fused: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupParams {
    /// Disk radius used to bridge nearby skin pixels.
    pub dilation_radius: usize,
    /// Components with fewer original skin pixels are dropped.
    pub min_pixels: usize,
}

impl Default for GroupParams {
    fn default() -> Self {
        Self {
            dilation_radius: 2,
            min_pixels: 5,
        }
    }
}

pub fn dilate_disk(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut out = vec![false; mask.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            if !mask[y as usize * width + x as usize] {
                continue;
            }
            for (dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
                    out[ny as usize * width + nx as usize] = true;
                }
            }
        }
    }
    out
}

/// 8-connected component label per pixel (`usize::MAX` for background), in
/// raster order of first appearance.
pub fn label_components(mask: &[bool], width: usize, height: usize) -> (Vec<usize>, usize) {
    let mut labels = vec![usize::MAX; mask.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != usize::MAX {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx as usize >= width || ny as usize >= height {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && labels[j] == usize::MAX {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        next += 1;
    }
    (labels, next)
}

/// Groups skin pixels lying within the dilation radius of each other into
/// components; each component keeps only its original skin pixels.
pub fn group_components(
    mask: &SkinMask,
    fused: &FusedImage,
    params: &GroupParams,
) -> Result<Vec<SkinComponent>> {
    let (w, h) = (mask.width, mask.height);
    if fused.map.dims() != (w, h) {
        return Err(Error::Shape(format!(
            "mask is {w}x{h}, fused image is {}x{}",
            fused.map.width(),
            fused.map.height()
        )));
    }
    let dilated = dilate_disk(&mask.pixels, w, h, params.dilation_radius);
    let (labels, n) = label_components(&dilated, w, h);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &on) in mask.pixels.iter().enumerate() {
        if on {
            members[labels[i]].push(i);
        }
    }
    let components = members
        .into_iter()
        .filter(|m| !m.is_empty() && m.len() >= params.min_pixels)
        .enumerate()
        .map(|(id, pixels)| {
            let bbox = Rect::bounding(pixels.iter().map(|&i| (i % w, i / w)))
                .expect("non-empty component");
            let mean_fused = pixels
                .iter()
                .map(|&i| fused.values()[i] as f64)
                .sum::<f64>()
                / pixels.len() as f64;
            SkinComponent {
                id,
                frame_index: fused.frame_index,
                pixels,
                bbox,
                mean_fused,
            }
        })
        .collect();
    Ok(components)
}

/// Outcome of the window-level component selection.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSkin {
    /// Surviving components, in input order.
    pub kept: Vec<SkinComponent>,
    /// Union of the surviving pixels, in keyframe coordinates.
    pub mask: SkinMask,
    pub priors: Option<SkinPriors>,
    /// Only one component was offered; it was kept without a decision.
    pub single_component: bool,
}

/// Re-selects components across the window: component means are split into
/// a high and a low group, the group modes act as Avg/Max modes for the
/// prior, and each component's likelihood is its mean over the pooled maximum.
pub fn refine_components_temporal(
    per_frame: &[(usize, Vec<SkinComponent>)],
    dims: (usize, usize),
    seed: u64,
) -> Result<TemporalSkin> {
    if per_frame.is_empty() {
        return Err(Error::EmptyInput);
    }
    let pool: Vec<&SkinComponent> = per_frame.iter().flat_map(|(_, c)| c.iter()).collect();
    let mask = SkinMask::empty(dims.0, dims.1, SkinStage::ComponentLevel);
    let finish = |kept: Vec<SkinComponent>, mut mask: SkinMask, priors, single| {
        for c in &kept {
            for &i in &c.pixels {
                mask.pixels[i] = true;
            }
        }
        TemporalSkin {
            kept,
            mask,
            priors,
            single_component: single,
        }
    };
    match pool.len() {
        0 => return Ok(finish(Vec::new(), mask, None, false)),
        1 => return Ok(finish(vec![pool[0].clone()], mask, None, true)),
        _ => {}
    }
    let means: Vec<f64> = pool.iter().map(|c| c.mean_fused).collect();
    let upper = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower = means.iter().copied().fold(f64::INFINITY, f64::min);
    if upper - lower <= 1e-12 || upper <= 0.0 {
        let kept = pool.into_iter().cloned().collect();
        return Ok(finish(kept, mask, None, false));
    }
    let split = kmeans_1d(&means, 2, seed, &KMeansConfig::default())?;
    let group_mode = |g: usize| {
        histogram_mode(
            means
                .iter()
                .zip(&split.labels)
                .filter(|(_, &l)| l == g)
                .map(|(&m, _)| m),
            upper,
            HISTOGRAM_BINS,
        )
        .map_or(0.0, |(m, _)| m)
    };
    let priors = SkinPriors::from_modes(group_mode(1), group_mode(0));
    let kept = pool
        .into_iter()
        .filter(|c| posterior(c.mean_fused / upper, priors.p_skin) >= DECISION_THRESHOLD)
        .cloned()
        .collect();
    Ok(finish(kept, mask, Some(priors), false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::FloatMap;

    fn fused_from(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> FusedImage {
        FusedImage {
            frame_index: 0,
            map: FloatMap::from_fn(w, h, f),
        }
    }

    fn partition_all(cluster: Cluster, n: usize) -> ClusterPartition {
        ClusterPartition {
            labels: vec![cluster; n],
            centroids: [1.0, 0.5, 0.0],
            inertia: 0.0,
            degenerate: false,
        }
    }

    #[test]
    fn priors_examples() {
        let p = SkinPriors::from_modes(0.3, 0.6);
        assert!((p.p_skin - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.p_not - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.p_skin + p.p_not, 1.0);
        assert_eq!(SkinPriors::from_modes(0.4, 0.4).p_skin, 0.5);
        let d = SkinPriors::from_modes(0.0, 0.0);
        assert!(d.degenerate);
        assert_eq!(d.p_skin, 0.5);
    }

    #[test]
    fn priors_from_cluster_modes() {
        use Cluster::*;
        // Avg values {0.1, 0.1, 0.9}, Max values {0.9, 0.9, 0.2}.
        let fused = fused_from(6, 1, |x, _| [0.1, 0.1, 0.9, 0.9, 0.9, 0.2][x]);
        let partition = ClusterPartition {
            labels: vec![Avg, Avg, Avg, Max, Max, Max],
            centroids: [1.0, 0.5, 0.0],
            inertia: 0.0,
            degenerate: false,
        };
        let p = skin_priors(&partition, &fused).unwrap();
        let bin = 0.9 / 256.0;
        assert!((p.mode_avg - 0.1).abs() <= bin);
        assert!((p.mode_max - 0.9).abs() <= bin);
        assert!((p.p_skin - 0.1).abs() < 2e-3);
    }

    #[test]
    fn uniform_window_mode_value_likelihood() {
        let fused = fused_from(5, 5, |_, _| 0.6);
        let l = window_likelihood(&fused, 2, 2, 0.6, LikelihoodRule::ModeValue);
        assert!((l - 0.6 / 9.0).abs() < 0.6 / 256.0 / 9.0 + 1e-9);
        let post = posterior(l, 0.5);
        assert!((post - 0.0667).abs() < 1e-3);
        let mask = classify_skin_pixels(
            &fused,
            &partition_all(Cluster::Avg, 25),
            &SkinPriors::fixed(0.5),
            LikelihoodRule::ModeValue,
        )
        .unwrap();
        assert!(!mask.get(2, 2));
        assert_eq!(
            window_likelihood(&fused, 2, 2, 0.6, LikelihoodRule::ModeFrequency),
            1.0
        );
    }

    #[test]
    fn extreme_priors() {
        let fused = fused_from(6, 6, |x, y| {
            if (x + y) % 3 == 0 {
                0.0
            } else {
                0.2 + 0.1 * x as f32
            }
        });
        let partition = partition_all(Cluster::Max, 36);
        for rule in [LikelihoodRule::ModeValue, LikelihoodRule::ModeFrequency] {
            let all =
                classify_skin_pixels(&fused, &partition, &SkinPriors::fixed(1.0), rule).unwrap();
            let none =
                classify_skin_pixels(&fused, &partition, &SkinPriors::fixed(0.0), rule).unwrap();
            let upper = fused.map.max_value() as f64;
            for y in 0..6 {
                for x in 0..6 {
                    assert_eq!(
                        all.get(x, y),
                        window_likelihood(&fused, x, y, upper, rule) > 0.0
                    );
                    assert!(!none.get(x, y));
                }
            }
        }
    }

    #[test]
    fn zero_window_is_not_skin() {
        let fused = fused_from(4, 4, |_, _| 0.0);
        assert_eq!(
            window_likelihood(&fused, 1, 1, 0.0, LikelihoodRule::ModeValue),
            0.0
        );
    }

    #[test]
    fn min_cluster_never_skin() {
        let fused = fused_from(5, 5, |_, _| 0.9);
        let mask = classify_skin_pixels(
            &fused,
            &partition_all(Cluster::Min, 25),
            &SkinPriors::fixed(1.0),
            LikelihoodRule::ModeFrequency,
        )
        .unwrap();
        assert_eq!(mask.count(), 0);
    }

    fn mask_with(w: usize, h: usize, on: &[(usize, usize)]) -> SkinMask {
        let mut m = SkinMask::empty(w, h, SkinStage::PixelLevel);
        for &(x, y) in on {
            m.pixels[y * w + x] = true;
        }
        m
    }

    #[test]
    fn grouping_bridges_two_pixel_gaps() {
        let fused = fused_from(20, 20, |_, _| 0.5);
        let params = GroupParams {
            min_pixels: 1,
            ..GroupParams::default()
        };
        let comps =
            group_components(&mask_with(20, 20, &[(5, 5), (7, 5)]), &fused, &params).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].area(), 2);
        assert_eq!(comps[0].bbox, Rect::new(5, 5, 3, 1).unwrap());
    }

    #[test]
    fn grouping_keeps_distant_blobs_apart() {
        let fused = fused_from(30, 10, |_, _| 0.5);
        let mut on = Vec::new();
        for y in 3..6 {
            for x in 2..5 {
                on.push((x, y));
                on.push((x + 13, y));
            }
        }
        let comps =
            group_components(&mask_with(30, 10, &on), &fused, &GroupParams::default()).unwrap();
        assert_eq!(comps.len(), 2);
        assert!(comps
            .iter()
            .all(|c| c.area() == 9 && (c.mean_fused - 0.5).abs() < 1e-7));
    }

    #[test]
    fn grouping_drops_specks() {
        let fused = fused_from(20, 20, |_, _| 0.5);
        let comps = group_components(
            &mask_with(20, 20, &[(1, 1), (15, 15)]),
            &fused,
            &GroupParams::default(),
        )
        .unwrap();
        assert!(comps.is_empty());
        assert!(group_components(
            &SkinMask::empty(20, 20, SkinStage::PixelLevel),
            &fused,
            &GroupParams::default()
        )
        .unwrap()
        .is_empty());
    }

    fn component(id: usize, frame: usize, mean: f64, pixels: Vec<usize>) -> SkinComponent {
        let bbox = Rect::bounding(pixels.iter().map(|&i| (i % 50, i / 50))).unwrap();
        SkinComponent {
            id,
            frame_index: frame,
            pixels,
            bbox,
            mean_fused: mean,
        }
    }

    #[test]
    fn temporal_identical_means_all_kept() {
        let frames = vec![
            (
                0,
                vec![
                    component(0, 0, 0.4, vec![1, 2, 3]),
                    component(1, 0, 0.4, vec![200, 201]),
                ],
            ),
            (1, vec![component(0, 1, 0.4, vec![1, 2, 3])]),
        ];
        let out = refine_components_temporal(&frames, (50, 50), 0).unwrap();
        assert_eq!(out.kept.len(), 3);
        assert_eq!(out.mask.count(), 5);
        assert_eq!(out.mask.source, SkinStage::ComponentLevel);
    }

    #[test]
    fn temporal_single_component() {
        let frames = vec![(0, vec![component(0, 0, 0.1, vec![7])])];
        let out = refine_components_temporal(&frames, (50, 50), 0).unwrap();
        assert!(out.single_component);
        assert_eq!(out.kept.len(), 1);
        assert!(matches!(
            refine_components_temporal(&[], (50, 50), 0),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn temporal_outlier_subset_and_deterministic() {
        let mut comps: Vec<_> = (0..20).map(|i| component(i, 0, 0.1, vec![i * 3])).collect();
        comps.push(component(20, 0, 0.9, vec![2000]));
        let frames = vec![(0, comps.clone())];
        let a = refine_components_temporal(&frames, (50, 50), 3).unwrap();
        let b = refine_components_temporal(&frames, (50, 50), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.kept.iter().all(|k| comps.contains(k)));
    }
}
