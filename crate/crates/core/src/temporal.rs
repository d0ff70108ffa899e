//! Frame differencing of fused images, the Max/Avg/Min partition of the
//! difference values, per-frame cluster statistics, and the temporal window /
//! keyframe decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FusedImage;
use crate::imaging::FloatMap;
use crate::kmeans::{kmeans_1d, KMeansConfig};

/// Running standard deviations below this never flag a change.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cluster {
    Max,
    Avg,
    Min,
}

impl Cluster {
    pub const ALL: [Cluster; 3] = [Cluster::Max, Cluster::Avg, Cluster::Min];

    #[inline]
    pub fn slot(self) -> usize {
        match self {
            Cluster::Max => 0,
            Cluster::Avg => 1,
            Cluster::Min => 2,
        }
    }
}

/// Three-way split of a map's values; `centroids` is indexed by [`Cluster::slot`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    pub labels: Vec<Cluster>,
    pub centroids: [f64; 3],
    pub inertia: f64,
    /// Fewer than three distinct values were clustered.
    pub degenerate: bool,
}

impl ClusterPartition {
    pub fn members(&self, cluster: Cluster) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }

    pub fn count(&self, cluster: Cluster) -> usize {
        self.labels.iter().filter(|&&c| c == cluster).count()
    }

    /// Every clustered value was zero: the two fused images were identical.
    pub fn is_zero_difference(&self) -> bool {
        self.degenerate && self.centroids.iter().all(|&c| c == 0.0)
    }
}

pub fn frame_difference(reference: &FusedImage, current: &FusedImage) -> Result<FloatMap> {
    let (a, b) = (&reference.map, &current.map);
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "fused images are {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .collect();
    FloatMap::new(a.width(), a.height(), a.channels(), values)
}

pub fn kmeans3(values: &[f32], seed: u64) -> Result<ClusterPartition> {
    kmeans3_with(values, seed, &KMeansConfig::default())
}

/// 1-D k-means with three clusters, relabelled Max/Avg/Min by descending centroid.
///
/// With fewer than three distinct values the distinct values are ranked from
/// the top: the largest is Max, the next Avg; empty clusters take the lowest
/// available centroid.
pub fn kmeans3_with(values: &[f32], seed: u64, cfg: &KMeansConfig) -> Result<ClusterPartition> {
    let values: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let km = kmeans_1d(&values, 3, seed, cfg)?;
    let n = km.centroids.len();
    // Rank from the top: ascending cluster j becomes slot n-1-j.
    let to_cluster = |j: usize| Cluster::ALL[n - 1 - j];
    let labels = km.labels.iter().map(|&j| to_cluster(j)).collect();
    let mut centroids = [km.centroids[0]; 3];
    for (j, &c) in km.centroids.iter().enumerate() {
        centroids[n - 1 - j] = c;
    }
    Ok(ClusterPartition {
        labels,
        centroids,
        inertia: km.inertia,
        degenerate: km.degenerate,
    })
}

/// Spread of the Max and Avg clusters and the median of the Min cluster,
/// measured on the fused values of the current frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub t: usize,
    pub sd_max: f64,
    pub sd_avg: f64,
    pub median_min: f64,
    /// Max or Avg had fewer than two members; its spread was taken as 0.
    pub small_cluster: bool,
    /// The two fused images were identical.
    pub zero_difference: bool,
}

impl ClusterStats {
    pub fn streams(&self) -> [f64; 3] {
        [self.sd_max, self.sd_avg, self.median_min]
    }
}

/// Sample standard deviation (`N - 1` denominator); `None` below two values.
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((ss / (n - 1.0)).sqrt())
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

pub fn cluster_stats(
    t: usize,
    partition: &ClusterPartition,
    fused: &FusedImage,
) -> Result<ClusterStats> {
    if partition.labels.len() != fused.values().len() {
        return Err(Error::Shape(format!(
            "partition covers {} pixels, fused image has {}",
            partition.labels.len(),
            fused.values().len()
        )));
    }
    let gather = |c: Cluster| -> Vec<f64> {
        partition
            .members(c)
            .map(|i| fused.values()[i] as f64)
            .collect()
    };
    let sd_max = sample_sd(&gather(Cluster::Max));
    let sd_avg = sample_sd(&gather(Cluster::Avg));
    Ok(ClusterStats {
        t,
        sd_max: sd_max.unwrap_or(0.0),
        sd_avg: sd_avg.unwrap_or(0.0),
        median_min: median(&gather(Cluster::Min)).unwrap_or(0.0),
        small_cluster: sd_max.is_none() || sd_avg.is_none(),
        zero_difference: partition.is_zero_difference(),
    })
}

/// Differences `current` against `reference`, partitions the difference and
/// reads the statistics from `current`.
pub fn frame_stats(
    reference: &FusedImage,
    current: &FusedImage,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<(ClusterPartition, ClusterStats)> {
    let diff = frame_difference(reference, current)?;
    let partition = kmeans3_with(diff.values(), seed, cfg)?;
    let stats = cluster_stats(current.frame_index, &partition, current)?;
    Ok((partition, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowParams {
    pub z_threshold: f64,
    /// History length required before a stream may fire.
    pub min_frames: usize,
    pub max_window: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self {
            z_threshold: 2.0,
            min_frames: 3,
            max_window: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Two of the three statistic streams changed abruptly.
    SuddenChange,
    /// The first successive frame was identical to the reference.
    DuplicateFrames,
    MaxWindow,
    EndOfSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalWindow {
    pub start_index: usize,
    pub end_index: usize,
    pub keyframe_index: usize,
    pub termination: Termination,
    pub stats_trace: Vec<ClusterStats>,
    /// Per entry of `stats_trace`: z-scores of (sd_max, sd_avg, median_min).
    pub z_trace: Vec<[Option<f64>; 3]>,
}

impl TemporalWindow {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Streaming form of [`detect_window`]: feed one frame's statistics at a time.
#[derive(Debug, Clone)]
pub struct WindowDetector {
    start_index: usize,
    params: WindowParams,
    history: Vec<ClusterStats>,
    z_trace: Vec<[Option<f64>; 3]>,
    terminated: Option<(usize, Termination)>,
}

impl WindowDetector {
    pub fn new(start_index: usize, params: WindowParams) -> Self {
        Self {
            start_index,
            params,
            history: Vec::new(),
            z_trace: Vec::new(),
            terminated: None,
        }
    }

    /// Last frame index the window may reach.
    fn cap(&self) -> usize {
        self.start_index + self.params.max_window.max(2) - 1
    }

    pub fn is_done(&self) -> bool {
        self.terminated.is_some()
    }

    fn z_scores(&self, current: &ClusterStats) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        if self.history.len() < self.params.min_frames.max(2) {
            return out;
        }
        let current = current.streams();
        for (s, z) in out.iter_mut().enumerate() {
            let seen: Vec<f64> = self.history.iter().map(|h| h.streams()[s]).collect();
            let mean = seen.iter().sum::<f64>() / seen.len() as f64;
            let sigma = sample_sd(&seen).unwrap_or(0.0);
            if sigma >= SIGMA_FLOOR {
                *z = Some((current[s] - mean) / sigma);
            }
        }
        out
    }

    /// Consumes the statistics of the next frame. Returns the window end as
    /// soon as the window is decided.
    pub fn push(&mut self, stats: ClusterStats) -> Option<usize> {
        if let Some((end, _)) = self.terminated {
            return Some(end);
        }
        if self.history.is_empty() && stats.zero_difference {
            let end = self.start_index + 1;
            self.terminated = Some((end, Termination::DuplicateFrames));
            self.z_trace.push([None; 3]);
            self.history.push(stats);
            return Some(end);
        }
        let z = self.z_scores(&stats);
        let fired = z
            .iter()
            .filter(|z| z.is_some_and(|z| z.abs() >= self.params.z_threshold))
            .count();
        let t = stats.t;
        self.z_trace.push(z);
        self.history.push(stats);
        if fired >= 2 {
            self.terminated = Some((t, Termination::SuddenChange));
        } else if t >= self.cap() {
            self.terminated = Some((t, Termination::MaxWindow));
        }
        self.terminated.map(|(end, _)| end)
    }

    pub fn finish(self) -> Result<TemporalWindow> {
        let Some(last) = self.history.last() else {
            return Err(Error::InsufficientFrames(1));
        };
        let (end_index, termination) = self
            .terminated
            .unwrap_or((last.t, Termination::EndOfSequence));
        Ok(TemporalWindow {
            start_index: self.start_index,
            end_index,
            keyframe_index: self.start_index,
            termination,
            stats_trace: self.history,
            z_trace: self.z_trace,
        })
    }
}

/// Decides the temporal window starting at `start_index` from the statistics
/// of the successive frames `start_index + 1, ...` (in order).
pub fn detect_window(
    start_index: usize,
    stats: &[ClusterStats],
    params: &WindowParams,
) -> Result<TemporalWindow> {
    if stats.is_empty() {
        return Err(Error::InsufficientFrames(1));
    }
    let mut detector = WindowDetector::new(start_index, *params);
    for s in stats {
        if detector.push(s.clone()).is_some() {
            break;
        }
    }
    detector.finish()
}
