//! Synthetic runner scenes with known torso and text boxes.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Annotation, AnnotationFile, LabeledBox};
use crate::imaging::Rect;

/// 5x7 bitmaps for the digits, one row per byte, bit 4 is the left column.
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

pub const GLYPH_W: i32 = 5;
pub const GLYPH_H: i32 = 7;
/// Blank space around the glyphs in a text box.
pub const TEXT_PADDING: i32 = 3;

pub fn glyph(c: char) -> Option<&'static [u8; 7]> {
    c.to_digit(10).map(|d| &DIGITS[d as usize])
}

/// Extent of `text` drawn at integer `scale` with one scaled column between glyphs.
pub fn text_extent(text: &str, scale: i32) -> (i32, i32) {
    let n = text.chars().count() as i32;
    if n == 0 {
        return (0, 0);
    }
    ((n * (GLYPH_W + 1) - 1) * scale, GLYPH_H * scale)
}

pub type Color = [f32; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonSpec {
    pub head_center: (f64, f64),
    /// Head ellipse width and height.
    pub head_size: (f64, f64),
    pub skin: Color,
    pub shirt: Color,
    pub ink: Color,
    pub torso: Rect,
    /// Arm width in pixels; arms hang on both sides of the torso.
    pub arm_width: i32,
    pub text: String,
    pub glyph_scale: i32,
    /// Glyph area padded by [`TEXT_PADDING`].
    pub text_box: Rect,
}

impl PersonSpec {
    fn glyph_origin(&self) -> (i32, i32) {
        (
            self.text_box.x + TEXT_PADDING,
            self.text_box.y + TEXT_PADDING,
        )
    }

    fn bounds(&self) -> Rect {
        let (cx, cy) = self.head_center;
        let (hw, hh) = self.head_size;
        let head = Rect::from_corners(
            (cx - hw / 2.0).floor() as i32,
            (cy - hh / 2.0).floor() as i32,
            (cx + hw / 2.0).ceil() as i32,
            (cy + hh / 2.0).ceil() as i32,
        )
        .unwrap_or(self.torso);
        let [a, b] = self.arms();
        head.union_bounds(&self.torso)
            .union_bounds(&a)
            .union_bounds(&b)
    }

    fn arms(&self) -> [Rect; 2] {
        let t = self.torso;
        let top = t.y + t.h / 24;
        let h = (t.h * 2) / 3;
        [
            Rect {
                x: t.x - self.arm_width,
                y: top,
                w: self.arm_width,
                h,
            },
            Rect {
                x: t.right(),
                y: top,
                w: self.arm_width,
                h,
            },
        ]
    }

    fn ink_at(&self, x: f64, y: f64) -> bool {
        let (ox, oy) = self.glyph_origin();
        let s = self.glyph_scale as f64;
        let gx = ((x - ox as f64) / s).floor();
        let gy = ((y - oy as f64) / s).floor();
        if gx < 0.0 || gy < 0.0 || gy >= GLYPH_H as f64 {
            return false;
        }
        let (gx, gy) = (gx as i32, gy as i32);
        let cell = gx / (GLYPH_W + 1);
        let col = gx % (GLYPH_W + 1);
        if col == GLYPH_W {
            return false;
        }
        match self.text.chars().nth(cell as usize).and_then(glyph) {
            Some(rows) => rows[gy as usize] & (0x10 >> col) != 0,
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub persons: Vec<PersonSpec>,
    pub background_seed: u64,
    /// Peak per-frame background shift, in pixels.
    pub jitter: f64,
    /// Peak per-frame person shift, in pixels (at most 1).
    pub drift: f64,
}

fn inside(r: &Rect, w: usize, h: usize) -> bool {
    r.clamp_to(w, h) == Some(*r)
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if self.width < 16 || self.height < 16 {
            return bad(format!(
                "frame {}x{} is smaller than 16x16",
                self.width, self.height
            ));
        }
        if !(0.0..=1.0).contains(&self.drift) || self.jitter < 0.0 || !self.jitter.is_finite() {
            return bad("drift must lie in [0, 1] and jitter must be nonnegative".into());
        }
        for (i, p) in self.persons.iter().enumerate() {
            if !inside(&p.torso, self.width, self.height) {
                return bad(format!("person {i}: torso outside the frame"));
            }
            if !p.torso.contains_rect(&p.text_box) {
                return bad(format!("person {i}: text box outside the torso"));
            }
            if p.text.is_empty() || p.text.chars().any(|c| glyph(c).is_none()) {
                return bad(format!("person {i}: text must be non-empty digits"));
            }
            if p.glyph_scale < 1 || p.arm_width < 0 {
                return bad(format!("person {i}: bad glyph scale or arm width"));
            }
            let (tw, th) = text_extent(&p.text, p.glyph_scale);
            if p.text_box.w != tw + 2 * TEXT_PADDING || p.text_box.h != th + 2 * TEXT_PADDING {
                return bad(format!("person {i}: text box does not fit the text"));
            }
            let (hw, hh) = p.head_size;
            let head = Rect::from_corners(
                (p.head_center.0 - hw / 2.0).floor() as i32,
                (p.head_center.1 - hh / 2.0).floor() as i32,
                (p.head_center.0 + hw / 2.0).ceil() as i32,
                (p.head_center.1 + hh / 2.0).ceil() as i32,
            );
            if !head.is_some_and(|r| inside(&r, self.width, self.height)) {
                return bad(format!("person {i}: head outside the frame"));
            }
            for arm in p.arms() {
                if arm.w > 0 && !inside(&arm, self.width, self.height) {
                    return bad(format!("person {i}: arm outside the frame"));
                }
            }
            for c in [p.skin, p.shirt, p.ink] {
                if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad(format!("person {i}: colour outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Text boxes as ground truth.
    pub fn text_boxes(&self) -> Vec<Rect> {
        self.persons.iter().map(|p| p.text_box).collect()
    }

    pub fn torsos(&self) -> Vec<Rect> {
        self.persons.iter().map(|p| p.torso).collect()
    }

    /// Static channel graphic in the first frame corner clear of every person.
    pub fn bug(&self) -> Option<Rect> {
        let (w, h) = (self.width as i32, self.height as i32);
        let (bw, bh) = (BUG_W, BUG_H);
        let corners = [
            (4, 4),
            (w - bw - 4, 4),
            (4, h - bh - 4),
            (w - bw - 4, h - bh - 4),
        ];
        let people: Vec<Rect> = self.persons.iter().map(|p| p.bounds().expand(4)).collect();
        corners
            .into_iter()
            .filter_map(|(x, y)| Rect::new(x, y, bw, bh).ok())
            .find(|r| r.x >= 0 && r.y >= 0 && people.iter().all(|p| p.intersection(r).is_none()))
    }
}

const BUG_W: i32 = 20;
const BUG_H: i32 = 10;

/// Black plate with three white bars, drawn pixel-aligned.
fn draw_bug(img: &mut RgbImage, r: Rect) {
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            let (u, v) = (x - r.x, y - r.y);
            let bar = (2..BUG_H - 2).contains(&v) && matches!(u, 4 | 5 | 9 | 10 | 14 | 15);
            let c = if bar { 255 } else { 0 };
            img.put_pixel(x as u32, y as u32, Rgb([c, c, c]));
        }
    }
}

fn luma(c: Color) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn random_color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> Color {
    loop {
        let c = [
            rng.random::<f32>(),
            rng.random::<f32>(),
            rng.random::<f32>(),
        ];
        if (lo..=hi).contains(&luma(c)) {
            return c;
        }
    }
}

/// One-person scene with randomized placement, sizes and colours.
pub fn random_scene(seed: u64, width: usize, height: usize) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_h = ((height as f64 - 24.0) / 7.0).floor() as i32;
    let h = rng.random_range(26.min(max_h)..=32.min(max_h));
    if h < 8 {
        return Err(Error::InvalidScene(format!(
            "frame {width}x{height} too small for a person"
        )));
    }
    let hw = (0.8 * h as f64).round();
    let arm_width = (0.35 * h as f64).round() as i32;
    let margin = h + arm_width + 4;
    let cx = rng.random_range(margin..=(width as i32 - margin).max(margin));
    let top = rng.random_range(10..=(height as i32 - 7 * h - 10).max(10));
    let torso = Rect::new(cx - h, top + h, 2 * h, 6 * h)?;

    let tone: f32 = rng.random_range(0.55..0.85);
    let warm = [tone * 1.12, tone * 0.97, tone * 0.86];
    let skin = warm.map(|v| v.clamp(0.0, 1.0));
    let shirt = random_color(&mut rng, 0.22, 0.42);
    let ink = [0.97, 0.97, 0.95];

    let digits = if 2 * h >= 64 {
        rng.random_range(2..=3)
    } else {
        2
    };
    let text: String = (0..digits)
        .map(|_| char::from(b'0' + rng.random_range(0..10u8)))
        .collect();
    let scale = 2;
    let (tw, th) = text_extent(&text, scale);
    let bw = tw + 2 * TEXT_PADDING;
    let bh = th + 2 * TEXT_PADDING;
    let text_box = Rect::new(torso.x + (torso.w - bw) / 2, torso.y + torso.h / 4, bw, bh)?;

    let spec = SceneSpec {
        width,
        height,
        persons: vec![PersonSpec {
            head_center: (cx as f64, top as f64 + h as f64 / 2.0),
            head_size: (hw, h as f64),
            skin,
            shirt,
            ink,
            torso,
            arm_width,
            text,
            glyph_scale: scale,
            text_box,
        }],
        background_seed: rng.random(),
        jitter: 0.0,
        drift: 0.6,
    };
    spec.validate()?;
    Ok(spec)
}

/// Smooth lattice noise in `[0, 1]`.
struct ValueNoise {
    grid: Vec<f32>,
    size: usize,
    cell: f64,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, size: usize, cell: f64) -> Self {
        Self {
            grid: (0..size * size).map(|_| rng.random()).collect(),
            size,
            cell,
        }
    }

    fn at(&self, x: f64, y: f64) -> f32 {
        let (u, v) = (x / self.cell, y / self.cell);
        let (x0, y0) = (u.floor(), v.floor());
        let (fx, fy) = ((u - x0) as f32, (v - y0) as f32);
        let n = self.size as i64;
        let g = |i: f64, j: f64| {
            let a = (i as i64).rem_euclid(n) as usize;
            let b = (j as i64).rem_euclid(n) as usize;
            self.grid[b * self.size + a]
        };
        let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1.0, y0) * fx;
        let bottom = g(x0, y0 + 1.0) * (1.0 - fx) + g(x0 + 1.0, y0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Mosaic of flat-shaded cells around jittered grid sites.
struct Background {
    base: Color,
    cell: f64,
    cols: usize,
    sites: Vec<(f64, f64, f32)>,
}

impl Background {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_color(&mut rng, 0.2, 0.4);
        let cell = 14.0;
        let cols = 64;
        let sites = (0..cols * cols)
            .map(|i| {
                let (gx, gy) = ((i % cols) as f64, (i / cols) as f64);
                (
                    (gx + rng.random_range(0.1..0.9)) * cell,
                    (gy + rng.random_range(0.1..0.9)) * cell,
                    rng.random_range(-0.12..0.12),
                )
            })
            .collect();
        Self {
            base,
            cell,
            cols,
            sites,
        }
    }

    fn at(&self, x: f64, y: f64) -> Color {
        let n = self.cols as i64;
        let (cx, cy) = (
            (x / self.cell).floor() as i64,
            (y / self.cell).floor() as i64,
        );
        let mut best = (f64::INFINITY, 0.0f32);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (gx, gy) = ((cx + dx).rem_euclid(n), (cy + dy).rem_euclid(n));
                let (sx, sy, shade) = self.sites[(gy * n + gx) as usize];
                // sites repeat with period cols * cell
                let ox = ((cx + dx) - gx) as f64 * self.cell;
                let oy = ((cy + dy) - gy) as f64 * self.cell;
                let d = (x - sx - ox).powi(2) + (y - sy - oy).powi(2);
                if d < best.0 {
                    best = (d, shade);
                }
            }
        }
        self.base.map(|c| (c + best.1).clamp(0.0, 1.0))
    }
}

/// Per-frame (background, person) offsets.
fn offsets(spec: &SceneSpec, n_frames: usize) -> Vec<((f64, f64), (f64, f64))> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.background_seed ^ 0x5eed_0ff5e7);
    (0..n_frames)
        .map(|k| {
            if k == 0 {
                return ((0.0, 0.0), (0.0, 0.0));
            }
            let mut pick = |a: f64| (rng.random_range(-a..=a), rng.random_range(-a..=a));
            (pick(spec.jitter), pick(spec.drift))
        })
        .collect()
}

const SUPERSAMPLE: usize = 3;

/// Renders frame `k` of the scene.
pub fn render_frame(spec: &SceneSpec, k: usize, n_frames: usize) -> RgbImage {
    let bg = Background::new(spec.background_seed);
    let skin_noise = {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.background_seed.wrapping_add(1));
        ValueNoise::new(&mut rng, 64, 3.0)
    };
    let ((jx, jy), (px, py)) = offsets(spec, n_frames.max(k + 1))[k];
    let mut img = RgbImage::new(spec.width as u32, spec.height as u32);
    let n = SUPERSAMPLE as f64;
    for y in 0..spec.height {
        for x in 0..spec.width {
            let mut acc = [0.0f32; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let fx = x as f64 + (sx as f64 + 0.5) / n;
                    let fy = y as f64 + (sy as f64 + 0.5) / n;
                    let c = sample(spec, &bg, &skin_noise, fx, fy, (jx, jy), (px, py));
                    for (a, v) in acc.iter_mut().zip(c) {
                        *a += v;
                    }
                }
            }
            let s = (SUPERSAMPLE * SUPERSAMPLE) as f32;
            img.put_pixel(
                x as u32,
                y as u32,
                Rgb(acc.map(|v| ((v / s).clamp(0.0, 1.0) * 255.0).round() as u8)),
            );
        }
    }
    if let Some(r) = spec.bug() {
        draw_bug(&mut img, r);
    }
    img
}

fn sample(
    spec: &SceneSpec,
    bg: &Background,
    skin_noise: &ValueNoise,
    x: f64,
    y: f64,
    jitter: (f64, f64),
    drift: (f64, f64),
) -> Color {
    let (qx, qy) = (x - drift.0, y - drift.1);
    let mottle = |c: Color| {
        let d = 0.06 * (skin_noise.at(qx, qy) - 0.5);
        c.map(|v| (v + d).clamp(0.0, 1.0))
    };
    for p in spec.persons.iter().rev() {
        let (cx, cy) = p.head_center;
        let (hw, hh) = p.head_size;
        let ex = (qx - cx) / (hw / 2.0);
        let ey = (qy - cy) / (hh / 2.0);
        if ex * ex + ey * ey <= 1.0 {
            return mottle(p.skin);
        }
        let in_rect = |r: &Rect| {
            qx >= r.x as f64 && qx < r.right() as f64 && qy >= r.y as f64 && qy < r.bottom() as f64
        };
        if in_rect(&p.torso) {
            return if p.ink_at(qx, qy) { p.ink } else { p.shirt };
        }
        if p.arms().iter().any(in_rect) {
            return mottle(p.skin);
        }
    }
    bg.at(x - jitter.0, y - jitter.1)
}

/// Ground truth written next to the frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub spec: SceneSpec,
    pub n_frames: usize,
    pub frames: Vec<String>,
}

/// Renders `n_frames` PNGs (`frame_0000.png`, ...), `gt.json` with the text
/// boxes of every frame, and `scene.json` with the full spec.
pub fn generate_scene(
    spec: &SceneSpec,
    n_frames: usize,
    out_dir: impl AsRef<Path>,
) -> Result<SceneTruth> {
    spec.validate()?;
    if n_frames == 0 {
        return Err(Error::InvalidScene("at least one frame is required".into()));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let names: Vec<String> = (0..n_frames).map(|k| format!("frame_{k:04}.png")).collect();
    let images: Vec<RgbImage> = {
        use rayon::prelude::*;
        (0..n_frames)
            .into_par_iter()
            .map(|k| render_frame(spec, k, n_frames))
            .collect()
    };
    for (img, name) in images.iter().zip(&names) {
        img.save(dir.join(name))?;
    }
    let gt = AnnotationFile {
        frames: (0..n_frames)
            .map(|index| Annotation {
                index,
                boxes: spec
                    .text_boxes()
                    .into_iter()
                    .map(|r| LabeledBox::from_rect(r, Some("bib")))
                    .collect(),
            })
            .collect(),
    };
    gt.write(dir.join("gt.json"))?;
    let truth = SceneTruth {
        spec: spec.clone(),
        n_frames,
        frames: names,
    };
    std::fs::write(
        dir.join("scene.json"),
        serde_json::to_string_pretty(&truth)? + "\n",
    )?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_extent_counts_gaps() {
        assert_eq!(text_extent("12", 2), (22, 14));
        assert_eq!(text_extent("1", 1), (5, 7));
    }

    #[test]
    fn random_scene_is_valid() {
        for seed in 0..20 {
            let s = random_scene(seed, 320, 288).unwrap();
            s.validate().unwrap();
            let p = &s.persons[0];
            assert!(p.torso.contains_rect(&p.text_box));
        }
    }

    #[test]
    fn text_outside_torso_rejected() {
        let mut s = random_scene(1, 320, 288).unwrap();
        s.persons[0].text_box = s.persons[0].text_box.translate(0, 1000);
        assert!(matches!(s.validate(), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn same_spec_same_pixels() {
        let s = random_scene(3, 96, 240).unwrap();
        assert_eq!(render_frame(&s, 2, 4), render_frame(&s, 2, 4));
    }
}
