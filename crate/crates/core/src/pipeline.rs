//! End-to-end run: fuse, window and keyframe, skin, face and torso, text.
//!
//! Artifacts written under the output directory:
//! `fuse/frame_NNNN.f32m`, `window.json`, `skin/`, `frames/NNNN.json`,
//! `torso.json`, `det.json` and `overlay.png`.

use std::path::Path;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{
    default_seed_gap, merge_seed_region, process_seed, FaceDetector, FileBackedDetector,
    SeedOutcome, SeedRegion, SkinHeuristicDetector, TorsoBox,
};
use crate::config::{DetectorConfig, PipelineConfig, ScoreSource};
use crate::error::{Error, Result};
use crate::eval::{Annotation, AnnotationFile, LabeledBox};
use crate::features::{compute_features, FusedImage};
use crate::imaging::{load_frame_sequence, save_mask_png, FloatMap, Frame, Rect};
use crate::kmeans::KMeansConfig;
use crate::overlay::render_overlay;
use crate::skin::{
    classify_skin_pixels_at, group_components, refine_components_temporal, skin_priors,
    ComponentSummary, SkinComponent, SkinMask, SkinPriors, SkinStage, TemporalSkin,
};
use crate::temporal::{
    frame_stats, kmeans3_with, Cluster, ClusterPartition, TemporalWindow, Termination,
    WindowDetector,
};
use crate::textdet::{decode_links, LinkScoreMaps};

/// Fused images of all frames, computed in parallel.
pub fn fuse_frames(frames: &[Frame], config: &PipelineConfig) -> Vec<FusedImage> {
    frames
        .par_iter()
        .map(|f| compute_features(f, &config.features).fused)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpan {
    pub start: usize,
    pub end: usize,
    pub keyframe: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub t: usize,
    pub sd_max: f64,
    pub sd_avg: f64,
    pub median_min: f64,
    pub z: [Option<f64>; 3],
    pub small_cluster: bool,
    pub zero_difference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: WindowSpan,
    pub stats: Vec<StatsRow>,
}

impl From<&TemporalWindow> for WindowReport {
    fn from(w: &TemporalWindow) -> Self {
        Self {
            window: WindowSpan {
                start: w.start_index,
                end: w.end_index,
                keyframe: w.keyframe_index,
                termination: w.termination,
            },
            stats: w
                .stats_trace
                .iter()
                .zip(&w.z_trace)
                .map(|(s, z)| StatsRow {
                    t: s.t,
                    sd_max: s.sd_max,
                    sd_avg: s.sd_avg,
                    median_min: s.median_min,
                    z: *z,
                    small_cluster: s.small_cluster,
                    zero_difference: s.zero_difference,
                })
                .collect(),
        }
    }
}

/// Window found from `start`, with the difference partition of every frame
/// examined (index `t - start - 1`).
pub struct WindowResult {
    pub window: TemporalWindow,
    pub partitions: Vec<ClusterPartition>,
}

pub fn find_window(
    fused: &[FusedImage],
    start: usize,
    config: &PipelineConfig,
) -> Result<WindowResult> {
    if fused.len() < start + 2 {
        return Err(Error::InsufficientFrames(fused.len().saturating_sub(start)));
    }
    let mut detector = WindowDetector::new(start, config.window);
    let mut partitions = Vec::new();
    for current in &fused[start + 1..] {
        let (partition, stats) = frame_stats(&fused[start], current, config.seed, &config.kmeans)?;
        partitions.push(partition);
        if detector.push(stats).is_some() {
            break;
        }
    }
    Ok(WindowResult {
        window: detector.finish()?,
        partitions,
    })
}

/// Partition used for skin classification of one frame. A degenerate
/// difference partition (no change between frames) is replaced by clustering
/// the frame's own fused values.
pub fn skin_partition(
    fused: &FusedImage,
    difference: &ClusterPartition,
    seed: u64,
    kmeans: &KMeansConfig,
) -> Result<(ClusterPartition, bool)> {
    if !difference.degenerate {
        return Ok((difference.clone(), false));
    }
    Ok((kmeans3_with(fused.values(), seed, kmeans)?, true))
}

/// Skin, face and torso results for a single frame, without its index so
/// that identical frames serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnalysis {
    /// The frame's own fused values were clustered (no change to difference).
    pub self_partition: bool,
    pub priors: SkinPriors,
    pub skin_pixels: usize,
    pub components: Vec<ComponentSummary>,
    pub outcomes: Vec<SeedOutcome>,
}

pub struct FrameSkin {
    pub analysis_priors: SkinPriors,
    pub self_partition: bool,
    pub mask: SkinMask,
    /// Max and Avg members of the partition.
    pub moving: SkinMask,
    pub components: Vec<SkinComponent>,
}

fn moving_pixels(partition: &ClusterPartition, width: usize, height: usize) -> SkinMask {
    let mut mask = SkinMask::empty(width, height, SkinStage::PixelLevel);
    for i in partition
        .members(Cluster::Max)
        .chain(partition.members(Cluster::Avg))
    {
        mask.pixels[i] = true;
    }
    mask
}

/// Pixels a face blob may lean on: skin pixels plus pixels that changed.
fn face_support(skin: &SkinMask, moving: &SkinMask) -> SkinMask {
    let mut out = moving.clone();
    for (o, s) in out.pixels.iter_mut().zip(&skin.pixels) {
        *o |= *s;
    }
    out
}

pub fn frame_skin(
    fused: &FusedImage,
    difference: &ClusterPartition,
    config: &PipelineConfig,
) -> Result<FrameSkin> {
    let (partition, self_partition) =
        skin_partition(fused, difference, config.seed, &config.kmeans)?;
    let priors = skin_priors(&partition, fused)?;
    let mask = classify_skin_pixels_at(
        fused,
        &partition,
        &priors,
        config.skin.likelihood,
        config.skin.posterior_threshold,
    )?;
    let components = group_components(&mask, fused, &config.skin.grouping)?;
    let (w, h) = fused.map.dims();
    Ok(FrameSkin {
        analysis_priors: priors,
        self_partition,
        moving: moving_pixels(&partition, w, h),
        mask,
        components,
    })
}

/// Face detector from the configuration; `support` feeds the skin heuristic.
pub fn build_detector(
    config: &PipelineConfig,
    support: &SkinMask,
) -> Result<Box<dyn FaceDetector>> {
    Ok(match &config.detector {
        DetectorConfig::SkinHeuristic => Box::new(SkinHeuristicDetector::new(
            support.clone(),
            config.heuristic,
        )),
        DetectorConfig::File { path } => Box::new(FileBackedDetector::from_json_file(path)?),
    })
}

/// Seeds from `components` and the face/torso outcome of each.
pub fn locate_torsos(
    frame: &Frame,
    components: &[SkinComponent],
    detector: &dyn FaceDetector,
    config: &PipelineConfig,
) -> Result<Vec<SeedOutcome>> {
    let (w, h) = frame.dims();
    let gap = config.seed_gap_fraction / 0.05 * default_seed_gap(w, h);
    let seeds: Vec<SeedRegion> = merge_seed_region(components, gap);
    seeds
        .par_iter()
        .map(|seed| {
            process_seed(
                detector,
                frame,
                seed,
                components,
                &config.refine,
                &config.torso,
            )
        })
        .collect()
}

/// Torsos in seed order, skipping any that overlap an earlier one.
pub fn distinct_torsos(outcomes: &[SeedOutcome], dedup_iou: f64) -> Vec<TorsoBox> {
    let mut out: Vec<TorsoBox> = Vec::new();
    for t in outcomes.iter().filter_map(|o| o.torso) {
        if out.iter().all(|k| k.rect.iou(&t.rect) < dedup_iou) {
            out.push(t);
        }
    }
    out
}

/// Text boxes inside each torso, in frame coordinates. With the fused-map
/// baseline, boxes touching the crop border are dropped: they trace the
/// torso outline rather than text.
pub fn detect_text(
    fused: &FusedImage,
    torsos: &[TorsoBox],
    maps: Option<&LinkScoreMaps>,
    config: &PipelineConfig,
) -> Result<Vec<Rect>> {
    let d = &config.decode;
    let mut boxes = Vec::new();
    for t in torsos {
        let r = t.rect;
        let scores = match maps {
            None => LinkScoreMaps::baseline_from_fused(&fused.map.crop(r)),
            Some(m) => LinkScoreMaps::new(m.pixel().crop(r), m.links().crop(r))?,
        };
        let inner = |b: &Rect| b.x > 0 && b.y > 0 && b.right() < r.w && b.bottom() < r.h;
        boxes.extend(
            decode_links(&scores, d.theta_pixel, d.theta_link, d.min_area)
                .into_iter()
                .filter(|b| maps.is_some() || inner(b))
                .map(|b| b.translate(r.x, r.y)),
        );
    }
    Ok(boxes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinSummary {
    pub kept: Vec<ComponentSummary>,
    pub priors: Option<SkinPriors>,
    pub single_component: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsoReport {
    pub keyframe: usize,
    /// Nothing torso-like was found (no skin, or no usable seed).
    pub no_subject: bool,
    pub outcomes: Vec<SeedOutcome>,
    pub torsos: Vec<TorsoBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub window: WindowReport,
    pub frames: Vec<(usize, FrameAnalysis)>,
    pub skin: SkinSummary,
    pub torso: TorsoReport,
    pub detections: AnnotationFile,
}

impl PipelineOutput {
    pub fn keyframe(&self) -> usize {
        self.window.window.keyframe
    }

    pub fn text_boxes(&self) -> Vec<Rect> {
        self.detections
            .frames
            .iter()
            .filter(|a| a.index == self.keyframe())
            .flat_map(|a| a.boxes.iter().map(LabeledBox::rect))
            .collect()
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Loads the frames in `frames_dir` and runs every stage.
pub fn run_pipeline(
    frames_dir: impl AsRef<Path>,
    config: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    config.validate()?;
    let frames =
        load_frame_sequence(frames_dir, &config.frame_pattern).map_err(Error::at("load"))?;
    run_on_frames(&frames, config, out_dir)
}

/// Window, per-frame skin and the window-level component selection.
pub struct SkinStageResult {
    pub window: TemporalWindow,
    pub report: WindowReport,
    /// Skin of every window frame, in frame order.
    pub skins: Vec<(usize, FrameSkin)>,
    pub temporal: TemporalSkin,
}

impl SkinStageResult {
    fn skin_of(&self, frame: usize) -> &FrameSkin {
        &self.skins[frame - self.window.start_index].1
    }

    pub fn summary(&self) -> SkinSummary {
        SkinSummary {
            kept: self
                .temporal
                .kept
                .iter()
                .map(SkinComponent::summary)
                .collect(),
            priors: self.temporal.priors,
            single_component: self.temporal.single_component,
        }
    }
}

pub fn skin_stage(fused: &[FusedImage], config: &PipelineConfig) -> Result<SkinStageResult> {
    let WindowResult { window, partitions } =
        find_window(fused, 0, config).map_err(Error::at("window"))?;
    info!(
        "window {}..={} ({:?}), keyframe {}",
        window.start_index, window.end_index, window.termination, window.keyframe_index
    );
    let start = window.start_index;
    let terminal = partitions
        .last()
        .expect("window examined at least one frame");
    let skins: Vec<(usize, FrameSkin)> = (start..=window.end_index)
        .into_par_iter()
        .map(|f| {
            let diff = if f == start {
                terminal
            } else {
                &partitions[f - start - 1]
            };
            frame_skin(&fused[f], diff, config).map(|s| (f, s))
        })
        .collect::<Result<_>>()
        .map_err(Error::at("skin"))?;
    let per_frame: Vec<(usize, Vec<SkinComponent>)> = skins
        .iter()
        .map(|(f, s)| (*f, s.components.clone()))
        .collect();
    let dims = fused[window.keyframe_index].map.dims();
    let temporal =
        refine_components_temporal(&per_frame, dims, config.seed).map_err(Error::at("skin"))?;
    debug!(
        "kept {} of {} skin components",
        temporal.kept.len(),
        per_frame.iter().map(|p| p.1.len()).sum::<usize>()
    );
    Ok(SkinStageResult {
        report: WindowReport::from(&window),
        window,
        skins,
        temporal,
    })
}

/// Face and torso outcomes of every window frame and of the keyframe.
pub fn torso_stage(
    frames: &[Frame],
    skin: &SkinStageResult,
    config: &PipelineConfig,
) -> Result<(Vec<(usize, FrameAnalysis)>, TorsoReport)> {
    let frame_results: Vec<(usize, FrameAnalysis)> = skin
        .skins
        .par_iter()
        .map(|(f, s)| {
            let detector = build_detector(config, &face_support(&s.mask, &s.moving))?;
            let outcomes = locate_torsos(&frames[*f], &s.components, detector.as_ref(), config)?;
            Ok((
                *f,
                FrameAnalysis {
                    self_partition: s.self_partition,
                    priors: s.analysis_priors,
                    skin_pixels: s.mask.count(),
                    components: s.components.iter().map(SkinComponent::summary).collect(),
                    outcomes,
                },
            ))
        })
        .collect::<Result<_>>()
        .map_err(Error::at("torso"))?;

    let key = skin.window.keyframe_index;
    let support = face_support(&skin.temporal.mask, &skin.skin_of(key).moving);
    let detector = build_detector(config, &support).map_err(Error::at("torso"))?;
    let outcomes = locate_torsos(&frames[key], &skin.temporal.kept, detector.as_ref(), config)
        .map_err(Error::at("torso"))?;
    let torsos = distinct_torsos(&outcomes, config.torso_dedup_iou);
    Ok((
        frame_results,
        TorsoReport {
            keyframe: key,
            no_subject: torsos.is_empty(),
            outcomes,
            torsos,
        },
    ))
}

/// Score maps named by the configuration, checked against the frame size.
pub fn load_score_maps(
    config: &PipelineConfig,
    dims: (usize, usize),
) -> Result<Option<LinkScoreMaps>> {
    match &config.scores {
        ScoreSource::BaselineFromFused => Ok(None),
        ScoreSource::Files { pixel, links } => {
            let m = LinkScoreMaps::read_f32m(pixel, links)?;
            if m.dims() != dims {
                return Err(Error::Shape(format!(
                    "score maps are {:?}, frames are {:?}",
                    m.dims(),
                    dims
                )));
            }
            Ok(Some(m))
        }
    }
}

/// Text boxes inside the torsos, for the keyframe or every window frame.
pub fn text_stage(
    fused: &[FusedImage],
    window: &TemporalWindow,
    torsos: &[TorsoBox],
    maps: Option<&LinkScoreMaps>,
    config: &PipelineConfig,
) -> Result<AnnotationFile> {
    let det_frames: Vec<usize> = if config.detect_all_frames {
        (window.start_index..=window.end_index).collect()
    } else {
        vec![window.keyframe_index]
    };
    let mut detections = AnnotationFile::default();
    for f in det_frames {
        let boxes = detect_text(&fused[f], torsos, maps, config)?;
        detections.frames.push(Annotation {
            index: f,
            boxes: boxes
                .into_iter()
                .map(|r| LabeledBox::from_rect(r, None))
                .collect(),
        });
    }
    Ok(detections)
}

pub fn run_on_frames(
    frames: &[Frame],
    config: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    if frames.len() < 2 {
        return Err(Error::at("window")(Error::InsufficientFrames(frames.len())));
    }
    if let Some(dir) = out_dir {
        for sub in ["fuse", "skin", "frames"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
    }

    let fused = fuse_frames(frames, config);
    info!("fused {} frames", fused.len());
    if let Some(dir) = out_dir {
        for f in &fused {
            f.map.write_f32m(
                dir.join("fuse")
                    .join(format!("frame_{:04}.f32m", f.frame_index)),
            )?;
        }
    }

    let skin = skin_stage(&fused, config)?;
    if let Some(dir) = out_dir {
        write_json(&dir.join("window.json"), &skin.report)?;
    }
    let (frame_results, torso) = torso_stage(frames, &skin, config)?;
    let maps = load_score_maps(config, frames[0].dims()).map_err(Error::at("detect"))?;
    let detections = text_stage(&fused, &skin.window, &torso.torsos, maps.as_ref(), config)
        .map_err(Error::at("detect"))?;

    let output = PipelineOutput {
        window: skin.report.clone(),
        frames: frame_results,
        skin: skin.summary(),
        torso,
        detections,
    };
    if let Some(dir) = out_dir {
        write_skin_artifacts(dir, &skin)?;
        write_artifacts(dir, frames, &fused, &output, config)?;
    }
    Ok(output)
}

/// `skin/pixel_NNNN.png` per window frame, `skin/components.png` and
/// `skin/components.json`.
pub fn write_skin_artifacts(dir: &Path, skin: &SkinStageResult) -> Result<()> {
    let skin_dir = dir.join("skin");
    std::fs::create_dir_all(&skin_dir)?;
    for (f, s) in &skin.skins {
        save_mask_png(
            &s.mask.pixels,
            s.mask.width,
            s.mask.height,
            skin_dir.join(format!("pixel_{f:04}.png")),
        )?;
    }
    let m = &skin.temporal.mask;
    save_mask_png(
        &m.pixels,
        m.width,
        m.height,
        skin_dir.join("components.png"),
    )?;
    write_json(&skin_dir.join("components.json"), &skin.summary())
}

fn write_artifacts(
    dir: &Path,
    frames: &[Frame],
    fused: &[FusedImage],
    output: &PipelineOutput,
    config: &PipelineConfig,
) -> Result<()> {
    for (f, analysis) in &output.frames {
        write_json(&dir.join("frames").join(format!("{f:04}.json")), analysis)?;
    }
    write_json(&dir.join("torso.json"), &output.torso)?;
    output.detections.write(dir.join("det.json"))?;
    if config.overlay {
        let key = output.keyframe();
        let torsos: Vec<Rect> = output.torso.torsos.iter().map(|t| t.rect).collect();
        render_overlay(
            &frames[key],
            &torsos,
            &output.text_boxes(),
            dir.join("overlay.png"),
        )?;
        fused[key]
            .map
            .to_gray_image()
            .save(dir.join("fuse").join("keyframe.png"))?;
    }
    Ok(())
}

/// Reads a fused map written by the `fuse` stage.
pub fn read_fused(path: impl AsRef<Path>, frame_index: usize) -> Result<FusedImage> {
    let map = FloatMap::read_f32m(path)?;
    if map.channels() != 1 {
        return Err(Error::Shape("fused maps have one channel".into()));
    }
    Ok(FusedImage { frame_index, map })
}
