//! Seed regions from skin components, the face-detector seam with iterative
//! boundary refinement, and torso estimation with or without a face.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Frame, Rect};
use crate::skin::{dilate_disk, SkinComponent, SkinMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub rect: Rect,
    pub confidence: f64,
    pub refined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FromFace,
    FromSkinComponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorsoBox {
    #[serde(rename = "bbox")]
    pub rect: Rect,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub head_height: Option<i32>,
    /// The geometric estimate was cut by the frame border.
    #[serde(default)]
    pub clamped: bool,
}

/// The four skin/face/torso situations a seed region can be in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TorsoCase {
    /// (i) face found and skin evidence inside the torso estimate.
    FaceAndTorso,
    /// (ii) face found, no skin inside the torso estimate.
    FaceWithoutTorso,
    /// (iii) no face, torso-shaped skin.
    TorsoWithoutFace,
    /// (iv) neither; nothing is emitted.
    Neither,
}

pub fn route_case(face_found: bool, torso_skin: bool) -> TorsoCase {
    match (face_found, torso_skin) {
        (true, true) => TorsoCase::FaceAndTorso,
        (true, false) => TorsoCase::FaceWithoutTorso,
        (false, true) => TorsoCase::TorsoWithoutFace,
        (false, false) => TorsoCase::Neither,
    }
}

/// A merged group of nearby skin components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRegion {
    pub rect: Rect,
    /// Indices into the component list the seed was built from.
    pub members: Vec<usize>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Default merge distance: 5% of the frame diagonal.
pub fn default_seed_gap(width: usize, height: usize) -> f64 {
    0.05 * (width as f64).hypot(height as f64)
}

/// Transitively merges components whose bounding boxes lie within `gap`
/// pixels of each other. Seeds are ordered by their first member.
pub fn merge_seed_region(components: &[SkinComponent], gap: f64) -> Vec<SeedRegion> {
    let n = components.len();
    let mut sets = DisjointSet::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if components[i].bbox.gap(&components[j].bbox) <= gap {
                sets.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let root = sets.find(i);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
        .into_iter()
        .map(|members| {
            let rect = members[1..]
                .iter()
                .fold(components[members[0]].bbox, |r, &m| {
                    r.union_bounds(&components[m].bbox)
                });
            SeedRegion { rect, members }
        })
        .collect()
}

/// Pluggable face detector.
///
/// Implementations must be deterministic, and `score` must be defined for
/// every in-bounds rectangle.
pub trait FaceDetector: Sync {
    fn detect(&self, frame: &Frame, region: Rect) -> Result<Vec<FaceBox>>;
    fn score(&self, frame: &Frame, rect: Rect) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFaces {
    pub index: usize,
    pub faces: Vec<FaceRecord>,
}

/// Precomputed detections file: `{"frames":[{"index":0,"faces":[...]}]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub frames: Vec<FrameFaces>,
}

/// Replays detections produced by an external detector. A rectangle scores
/// the best IoU-weighted confidence over the frame's detections.
#[derive(Debug, Clone, Default)]
pub struct FileBackedDetector {
    by_frame: HashMap<usize, Vec<FaceBox>>,
}

impl FileBackedDetector {
    pub fn new(file: DetectionsFile) -> Result<Self> {
        let mut by_frame: HashMap<usize, Vec<FaceBox>> = HashMap::new();
        for frame in file.frames {
            let entry = by_frame.entry(frame.index).or_default();
            for f in frame.faces {
                if !f.confidence.is_finite() {
                    return Err(Error::Detector(format!(
                        "non-finite confidence in frame {}",
                        frame.index
                    )));
                }
                entry.push(FaceBox {
                    rect: Rect::new(f.x, f.y, f.w, f.h)?,
                    confidence: f.confidence.clamp(0.0, 1.0),
                    refined: false,
                });
            }
        }
        Ok(Self { by_frame })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(serde_json::from_str(&text)?)
    }

    fn faces(&self, frame: &Frame) -> &[FaceBox] {
        self.by_frame
            .get(&frame.index)
            .map_or(&[], |v| v.as_slice())
    }
}

impl FaceDetector for FileBackedDetector {
    fn detect(&self, frame: &Frame, region: Rect) -> Result<Vec<FaceBox>> {
        Ok(self
            .faces(frame)
            .iter()
            .filter(|f| f.rect.intersection(&region).is_some())
            .filter_map(|f| {
                f.rect
                    .clamp_to(frame.width(), frame.height())
                    .map(|rect| FaceBox { rect, ..*f })
            })
            .collect())
    }

    fn score(&self, frame: &Frame, rect: Rect) -> Result<f64> {
        Ok(self
            .faces(frame)
            .iter()
            .map(|f| rect.iou(&f.rect) * f.confidence)
            .fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicParams {
    /// Largest intensity difference to the face tone still counted as skin.
    pub tone_tolerance: f32,
    /// Number of dominant skin intensities tried as face tones.
    pub tone_candidates: usize,
    pub min_area: usize,
    /// Accepted width/height range of a face blob.
    pub min_aspect: f64,
    pub max_aspect: f64,
    /// Smallest blob area over bounding-box area.
    pub min_fill: f64,
    /// Recall weight of the F-score used as the face score.
    pub beta: f64,
    /// Smallest share of blob pixels within `support_radius` of a skin pixel.
    pub min_support: f64,
    pub support_radius: usize,
    /// Spread of the preference for the fill of an ellipse, pi/4.
    pub ellipse_spread: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            tone_tolerance: 0.04,
            tone_candidates: 16,
            min_area: 30,
            min_aspect: 0.6,
            max_aspect: 1.5,
            min_fill: 0.55,
            beta: 2.0,
            min_support: 0.2,
            support_radius: 2,
            ellipse_spread: 0.1,
        }
    }
}

/// Face proposals from skin intensities. Near a region, the dominant
/// intensities of supported pixels are candidate tones and pixels close to a
/// tone form blobs. A blob counts by its size, the share of its outline on
/// the support mask, and how close its fill is to that of an ellipse; the
/// heaviest near-square blob is the face.
///
/// The support mask is whatever marks pixels a face can sit on; the
/// pipeline passes skin pixels together with pixels that changed.
///
/// A rectangle's score is the F-beta overlap between the rectangle and the
/// tone-connected blob grown from its centre, using the dominant intensity of
/// the rectangle's central half as tone.
#[derive(Debug, Clone)]
pub struct SkinHeuristicDetector {
    skin: SkinMask,
    near_skin: Vec<bool>,
    params: HeuristicParams,
}

impl SkinHeuristicDetector {
    pub fn new(skin: SkinMask, params: HeuristicParams) -> Self {
        let near_skin = dilate_disk(&skin.pixels, skin.width, skin.height, params.support_radius);
        Self {
            skin,
            near_skin,
            params,
        }
    }

    /// Share of the blob's contour pixels that lie near the support mask.
    fn support(&self, blob: &[(i32, i32)], bbox: &Rect) -> f64 {
        let bw = bbox.w as usize;
        let mut inside = vec![false; bbox.area()];
        for &(x, y) in blob {
            inside[(y - bbox.y) as usize * bw + (x - bbox.x) as usize] = true;
        }
        let member = |x: i32, y: i32| {
            bbox.contains(x, y) && inside[(y - bbox.y) as usize * bw + (x - bbox.x) as usize]
        };
        let (mut contour, mut near) = (0usize, 0usize);
        for &(x, y) in blob {
            if [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
                .iter()
                .all(|&(a, b)| member(a, b))
            {
                continue;
            }
            contour += 1;
            near += self.near_skin[y as usize * self.skin.width + x as usize] as usize;
        }
        near as f64 / contour.max(1) as f64
    }

    fn face_shaped(&self, rect: &Rect) -> bool {
        let aspect = rect.w as f64 / rect.h as f64;
        (self.params.min_aspect..=self.params.max_aspect).contains(&aspect)
    }

    fn tones(&self, frame: &Frame, region: Rect) -> Vec<f32> {
        const BINS: usize = 64;
        let mut sums = [0.0f64; BINS];
        let mut counts = [0usize; BINS];
        for y in region.y..region.bottom() {
            for x in region.x..region.right() {
                if self.near_skin[y as usize * self.skin.width + x as usize] {
                    let v = frame.get(x as usize, y as usize);
                    let b = ((v * BINS as f32) as usize).min(BINS - 1);
                    sums[b] += v as f64;
                    counts[b] += 1;
                }
            }
        }
        let mut order: Vec<usize> = (0..BINS).filter(|&b| counts[b] > 0).collect();
        order.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
        order
            .into_iter()
            .take(self.params.tone_candidates)
            .map(|b| (sums[b] / counts[b] as f64) as f32)
            .collect()
    }

    /// Pixels of `area` within tolerance of `tone`, 4-connected to `start`.
    /// Stops once the blob holds more than `cap` pixels.
    fn grow(
        &self,
        frame: &Frame,
        area: Rect,
        start: (i32, i32),
        tone: f32,
        seen: &mut [bool],
        cap: usize,
    ) -> Vec<(i32, i32)> {
        let aw = area.w as usize;
        let idx = |x: i32, y: i32| (y - area.y) as usize * aw + (x - area.x) as usize;
        let near = |x: i32, y: i32| {
            (frame.get(x as usize, y as usize) - tone).abs() <= self.params.tone_tolerance
        };
        let mut out = Vec::new();
        if !area.contains(start.0, start.1)
            || seen[idx(start.0, start.1)]
            || !near(start.0, start.1)
        {
            return out;
        }
        let mut queue = VecDeque::from([start]);
        seen[idx(start.0, start.1)] = true;
        while let Some((x, y)) = queue.pop_front() {
            out.push((x, y));
            if out.len() > cap {
                break;
            }
            for (nx, ny) in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
                if area.contains(nx, ny) && !seen[idx(nx, ny)] && near(nx, ny) {
                    seen[idx(nx, ny)] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        out
    }

    fn dominant_tone(&self, frame: &Frame, rect: Rect) -> Option<f32> {
        const BINS: usize = 64;
        let inner = Rect::from_corners(
            rect.x + rect.w / 4,
            rect.y + rect.h / 4,
            rect.right() - rect.w / 4,
            rect.bottom() - rect.h / 4,
        )
        .unwrap_or(rect);
        let mut sums = [0.0f64; BINS];
        let mut counts = [0usize; BINS];
        for y in inner.y..inner.bottom() {
            for x in inner.x..inner.right() {
                let v = frame.get(x as usize, y as usize);
                let b = ((v * BINS as f32) as usize).min(BINS - 1);
                sums[b] += v as f64;
                counts[b] += 1;
            }
        }
        let best = (0..BINS).max_by(|a, b| counts[*a].cmp(&counts[*b]).then(b.cmp(a)))?;
        (counts[best] > 0).then(|| (sums[best] / counts[best] as f64) as f32)
    }
}

fn check_in_frame(frame: &Frame, rect: Rect) -> Result<()> {
    if rect.clamp_to(frame.width(), frame.height()) != Some(rect) {
        return Err(Error::InvalidRect(format!(
            "{rect:?} is not inside the frame"
        )));
    }
    Ok(())
}

fn expand(rect: Rect, dx: i32, dy: i32, frame: &Frame) -> Rect {
    Rect::from_corners(
        rect.x - dx,
        rect.y - dy,
        rect.right() + dx,
        rect.bottom() + dy,
    )
    .and_then(|r| r.clamp_to(frame.width(), frame.height()))
    .unwrap_or(rect)
}

impl FaceDetector for SkinHeuristicDetector {
    fn detect(&self, frame: &Frame, region: Rect) -> Result<Vec<FaceBox>> {
        if (self.skin.width, self.skin.height) != frame.dims() {
            return Err(Error::Detector("skin mask does not match the frame".into()));
        }
        let Some(region) = region.clamp_to(frame.width(), frame.height()) else {
            return Ok(Vec::new());
        };
        let reach = region.w.max(region.h) / 2 + 2;
        let search = expand(region, reach, reach, frame);
        let p = &self.params;
        let frame_rect = Rect::new(0, 0, frame.width() as i32, frame.height() as i32)?;
        let cap = search.area();
        let mut best: Option<(Rect, f64, f64)> = None;
        for tone in self.tones(frame, search) {
            let mut seen = vec![false; frame_rect.area()];
            for y in search.y..search.bottom() {
                for x in search.x..search.right() {
                    let blob = self.grow(frame, frame_rect, (x, y), tone, &mut seen, cap);
                    if blob.len() < p.min_area || blob.len() > cap {
                        continue;
                    }
                    let bbox = Rect::bounding(blob.iter().map(|&(x, y)| (x as usize, y as usize)))
                        .expect("non-empty blob");
                    let fill = blob.len() as f64 / bbox.area() as f64;
                    if !self.face_shaped(&bbox) || fill < p.min_fill {
                        continue;
                    }
                    if bbox.intersection(&region).is_none() {
                        continue;
                    }
                    let support = self.support(&blob, &bbox);
                    if support < p.min_support {
                        continue;
                    }
                    let oval =
                        (-((fill - std::f64::consts::FRAC_PI_4) / p.ellipse_spread).powi(2)).exp();
                    let weight = oval * support * blob.len() as f64;
                    let better = match best {
                        None => true,
                        Some((r, _, w)) => {
                            weight > w || (weight == w && (bbox.y, bbox.x) < (r.y, r.x))
                        }
                    };
                    if better {
                        best = Some((bbox, fill * support, weight));
                    }
                }
            }
        }
        Ok(best
            .map(|(rect, confidence, _)| FaceBox {
                rect,
                confidence: confidence.clamp(0.0, 1.0),
                refined: false,
            })
            .into_iter()
            .collect())
    }

    fn score(&self, frame: &Frame, rect: Rect) -> Result<f64> {
        check_in_frame(frame, rect)?;
        if !self.face_shaped(&rect) {
            return Ok(0.0);
        }
        let Some(tone) = self.dominant_tone(frame, rect) else {
            return Ok(0.0);
        };
        let area = expand(rect, rect.w, rect.h, frame);
        let centre = (rect.x + rect.w / 2, rect.y + rect.h / 2);
        let mut seen = vec![false; area.area()];
        let blob = self.grow(frame, area, centre, tone, &mut seen, usize::MAX);
        if blob.is_empty() {
            return Ok(0.0);
        }
        let inside = blob.iter().filter(|&&(x, y)| rect.contains(x, y)).count() as f64;
        let precision = inside / rect.area() as f64;
        let recall = inside / blob.len() as f64;
        let b2 = self.params.beta * self.params.beta;
        if precision + recall == 0.0 {
            return Ok(0.0);
        }
        Ok((1.0 + b2) * precision * recall / (b2 * precision + recall))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineParams {
    /// Consecutive sweeps without an accepted move before stopping.
    pub patience: usize,
    pub max_sweeps: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            patience: 3,
            max_sweeps: 200,
        }
    }
}

fn side_moves(r: Rect) -> [Rect; 8] {
    [
        Rect {
            x: r.x - 1,
            w: r.w + 1,
            ..r
        },
        Rect {
            x: r.x + 1,
            w: r.w - 1,
            ..r
        },
        Rect {
            y: r.y - 1,
            h: r.h + 1,
            ..r
        },
        Rect {
            y: r.y + 1,
            h: r.h - 1,
            ..r
        },
        Rect { w: r.w + 1, ..r },
        Rect { w: r.w - 1, ..r },
        Rect { h: r.h + 1, ..r },
        Rect { h: r.h - 1, ..r },
    ]
}

/// Grows and shrinks each side of `start` one pixel at a time, keeping a move
/// only when the detector score strictly increases. Returns the best
/// rectangle and its score.
pub fn hill_climb(
    detector: &dyn FaceDetector,
    frame: &Frame,
    start: Rect,
    params: &RefineParams,
) -> Result<(Rect, f64)> {
    let (w, h) = frame.dims();
    let mut rect = start
        .clamp_to(w, h)
        .ok_or_else(|| Error::InvalidRect(format!("{start:?} lies outside the frame")))?;
    let mut score = detector.score(frame, rect)?;
    let mut idle = 0;
    for _ in 0..params.max_sweeps {
        let mut improved = false;
        for slot in 0..8 {
            let cand = side_moves(rect)[slot];
            if cand.w < 1 || cand.h < 1 || cand.clamp_to(w, h) != Some(cand) {
                continue;
            }
            let s = detector.score(frame, cand)?;
            if s > score {
                rect = cand;
                score = s;
                improved = true;
            }
        }
        idle = if improved { 0 } else { idle + 1 };
        if idle >= params.patience {
            break;
        }
    }
    Ok((rect, score))
}

/// Detects a face inside the seed and refines its boundary pixel by pixel.
pub fn refine_face(
    detector: &dyn FaceDetector,
    frame: &Frame,
    seed: &SeedRegion,
    params: &RefineParams,
) -> Result<Option<FaceBox>> {
    let detections = detector.detect(frame, seed.rect)?;
    let Some(initial) =
        detections
            .iter()
            .copied()
            .reduce(|a, b| if b.confidence > a.confidence { b } else { a })
    else {
        return Ok(None);
    };
    let (rect, score) = hill_climb(detector, frame, initial.rect, params)?;
    Ok(Some(FaceBox {
        rect,
        confidence: score.clamp(0.0, 1.0),
        refined: true,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TorsoParams {
    /// Vertical extent from the face top, in head heights.
    pub height_multiplier: f64,
    /// Torso width, in head heights.
    pub width_multiplier: f64,
    /// Growth of a skin component's box per side, as a fraction of its size.
    pub skin_growth: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
    /// Smallest faceless torso, as a fraction of the frame area.
    pub min_area_fraction: f64,
}

impl Default for TorsoParams {
    fn default() -> Self {
        Self {
            height_multiplier: 7.0,
            width_multiplier: 2.0,
            skin_growth: 0.1,
            min_aspect: 0.2,
            max_aspect: 1.2,
            min_area_fraction: 0.001,
        }
    }
}

/// Torso below a face: `width_multiplier * h` wide, centred on the face,
/// from the face bottom down to `height_multiplier * h` below the face top.
pub fn estimate_torso(
    face: &FaceBox,
    dims: (usize, usize),
    params: &TorsoParams,
) -> Result<TorsoBox> {
    let f = face.rect;
    if f.w < 1 || f.h < 1 {
        return Err(Error::InvalidRect(format!(
            "face {f:?} has an empty extent"
        )));
    }
    let width = (params.width_multiplier * f.h as f64).round() as i32;
    let x = f.x + (f.w - width).div_euclid(2);
    let top = f.bottom();
    let bottom = f.y + (params.height_multiplier * f.h as f64).round() as i32;
    let raw = Rect::from_corners(x, top, x + width, bottom).ok_or(Error::NoTorsoSpace(f))?;
    let rect = raw.clamp_to(dims.0, dims.1).ok_or(Error::NoTorsoSpace(f))?;
    Ok(TorsoBox {
        rect,
        provenance: Provenance::FromFace,
        head_height: Some(f.h),
        clamped: rect != raw,
    })
}

/// Torso taken directly from a skin component when no face is available.
pub fn torso_without_face(
    component: &SkinComponent,
    dims: (usize, usize),
    params: &TorsoParams,
) -> Option<TorsoBox> {
    let b = component.bbox;
    let dx = (params.skin_growth * b.w as f64).round() as i32;
    let dy = (params.skin_growth * b.h as f64).round() as i32;
    let raw = Rect::from_corners(b.x - dx, b.y - dy, b.right() + dx, b.bottom() + dy)?;
    let rect = raw.clamp_to(dims.0, dims.1)?;
    let aspect = rect.w as f64 / rect.h as f64;
    let min_area = params.min_area_fraction * (dims.0 * dims.1) as f64;
    if aspect < params.min_aspect || aspect > params.max_aspect || (rect.area() as f64) < min_area {
        return None;
    }
    Some(TorsoBox {
        rect,
        provenance: Provenance::FromSkinComponent,
        head_height: None,
        clamped: rect != raw,
    })
}

/// Face, torso and case decided for one seed region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: SeedRegion,
    pub face: Option<FaceBox>,
    pub torso: Option<TorsoBox>,
    pub case: TorsoCase,
}

/// The seed's members merged into a single component.
pub fn merge_members(seed: &SeedRegion, components: &[SkinComponent]) -> SkinComponent {
    let mut pixels: Vec<usize> = seed
        .members
        .iter()
        .flat_map(|&m| components[m].pixels.iter().copied())
        .collect();
    pixels.sort_unstable();
    pixels.dedup();
    let total: f64 = seed
        .members
        .iter()
        .map(|&m| components[m].mean_fused * components[m].area() as f64)
        .sum();
    let count: usize = seed.members.iter().map(|&m| components[m].area()).sum();
    SkinComponent {
        id: seed.members[0],
        frame_index: components[seed.members[0]].frame_index,
        pixels,
        bbox: seed.rect,
        mean_fused: if count > 0 { total / count as f64 } else { 0.0 },
    }
}

/// Runs face refinement and torso estimation for one seed.
pub fn process_seed(
    detector: &dyn FaceDetector,
    frame: &Frame,
    seed: &SeedRegion,
    components: &[SkinComponent],
    refine: &RefineParams,
    torso: &TorsoParams,
) -> Result<SeedOutcome> {
    let dims = frame.dims();
    let face = refine_face(detector, frame, seed, refine)?;
    let (torso_box, case) = match face {
        Some(face) => match estimate_torso(&face, dims, torso) {
            Ok(t) => {
                let supported = seed
                    .members
                    .iter()
                    .any(|&m| components[m].bbox.intersection(&t.rect).is_some());
                (Some(t), route_case(true, supported))
            }
            Err(Error::NoTorsoSpace(_)) => (None, route_case(true, false)),
            Err(e) => return Err(e),
        },
        None => {
            let t = torso_without_face(&merge_members(seed, components), dims, torso);
            let case = route_case(false, t.is_some());
            (t, case)
        }
    };
    Ok(SeedOutcome {
        seed: seed.clone(),
        face,
        torso: torso_box,
        case,
    })
}
