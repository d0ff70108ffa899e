//! Frames, float maps and rectangles shared by every stage, plus frame loading
//! and the `F32M` float-map container.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted frame side, in pixels.
pub const MIN_FRAME_SIDE: usize = 16;

const F32M_MAGIC: &[u8] = b"F32M\n";

/// A grayscale video frame with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(index: usize, width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
            return Err(Error::InvalidFrame(format!(
                "{width}x{height} is below the {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE} minimum"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "{} pixels for a {width}x{height} frame",
                pixels.len()
            )));
        }
        if let Some(&bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(bad));
        }
        Ok(Self {
            index,
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(
        index: usize,
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(index, width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Same pixels under a different ordinal.
    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    /// Copy of the pixels inside `rect` (which must lie within the frame).
    pub fn crop(&self, rect: Rect) -> FloatMap {
        let (x0, y0) = (rect.x as usize, rect.y as usize);
        let mut values = Vec::with_capacity(rect.area());
        for y in y0..y0 + rect.h as usize {
            values.extend_from_slice(
                &self.pixels[y * self.width + x0..y * self.width + x0 + rect.w as usize],
            );
        }
        FloatMap::new(rect.w as usize, rect.h as usize, 1, values).expect("intensities are finite")
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([(self.get(x as usize, y as usize) * 255.0).round() as u8])
        })
    }
}

/// Row-major, channel-interleaved grid of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FloatMap {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if values.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height}x{channels} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("map contains NaN or infinity".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::new(
            width,
            height,
            channels,
            vec![0.0; width * height * channels],
        )
        .expect("positive dimensions")
    }

    /// Single-channel map from a per-pixel function.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, 1, values).expect("from_fn produced a non-finite value")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[(y * self.width + x) * self.channels]
    }

    #[inline]
    pub fn get_c(&self, x: usize, y: usize, c: usize) -> f32 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn same_shape(&self, other: &FloatMap) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn max_value(&self) -> f32 {
        self.values
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min_value(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Copy of the pixels inside `rect`, all channels.
    pub fn crop(&self, rect: Rect) -> FloatMap {
        let (x0, y0) = (rect.x as usize, rect.y as usize);
        let c = self.channels;
        let mut values = Vec::with_capacity(rect.area() * c);
        for y in y0..y0 + rect.h as usize {
            let start = (y * self.width + x0) * c;
            values.extend_from_slice(&self.values[start..start + rect.w as usize * c]);
        }
        FloatMap::new(rect.w as usize, rect.h as usize, c, values).expect("crop of a valid map")
    }

    /// 8-bit visualization of channel 0, min-max stretched.
    pub fn to_gray_image(&self) -> GrayImage {
        let (lo, hi) = (self.min_value(), self.max_value());
        let span = if hi > lo { hi - lo } else { 1.0 };
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = (self.get(x as usize, y as usize) - lo) / span;
            Luma([(v * 255.0).round() as u8])
        })
    }

    pub fn to_f32m_bytes(&self) -> Vec<u8> {
        let header = format!("{} {} {}\n", self.width, self.height, self.channels);
        let mut out = Vec::with_capacity(F32M_MAGIC.len() + header.len() + self.values.len() * 4);
        out.extend_from_slice(F32M_MAGIC);
        out.extend_from_slice(header.as_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_f32m_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(F32M_MAGIC)
            .ok_or_else(|| Error::Format("missing F32M magic".into()))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("unterminated header line".into()))?;
        let header = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Format("header is not ASCII".into()))?;
        let dims: Vec<usize> = header
            .split(' ')
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("bad header line {header:?}")))?;
        let [width, height, channels] = dims[..] else {
            return Err(Error::Format(format!("bad header line {header:?}")));
        };
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Format(format!(
                "zero dimension in header {header:?}"
            )));
        }
        let payload = &rest[nl + 1..];
        let expected = width * height * channels;
        let found = payload.len() / 4;
        if found < expected {
            return Err(Error::Truncated { expected, found });
        }
        if payload.len() != expected * 4 {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                payload.len() - expected * 4
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(width, height, channels, values)
    }

    pub fn write_f32m(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(&self.to_f32m_bytes())?;
        Ok(())
    }

    pub fn read_f32m(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_f32m_bytes(&fs::read(path)?)
    }
}

/// Axis-aligned rectangle in pixel coordinates; covers `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub fn new(x: i32, y: i32, w: i32, h: i32) -> Result<Self> {
        if w < 1 || h < 1 {
            return Err(Error::InvalidRect(format!(
                "extent {w}x{h} must be at least 1x1"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    /// Rectangle spanning `[x0, x1) x [y0, y1)`, if non-empty.
    pub fn from_corners(x0: i32, y0: i32, x1: i32, y1: i32) -> Option<Self> {
        (x1 > x0 && y1 > y0).then_some(Self {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    #[inline]
    pub fn right(&self) -> i32 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> i32 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.w.max(0) as usize * self.h.max(0) as usize
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        Rect::from_corners(
            self.x.max(other.x),
            self.y.max(other.y),
            self.right().min(other.right()),
            self.bottom().min(other.bottom()),
        )
    }

    /// Intersection over union; 0 for disjoint rectangles.
    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection(other).map_or(0, |r| r.area()) as f64;
        let union = self.area() as f64 + other.area() as f64 - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn union_bounds(&self, other: &Rect) -> Rect {
        Rect {
            x: self.x.min(other.x),
            y: self.y.min(other.y),
            w: self.right().max(other.right()) - self.x.min(other.x),
            h: self.bottom().max(other.bottom()) - self.y.min(other.y),
        }
    }

    /// Euclidean gap between the two rectangles; 0 when they touch or overlap.
    pub fn gap(&self, other: &Rect) -> f64 {
        let dx = (other.x - self.right()).max(self.x - other.right()).max(0) as f64;
        let dy = (other.y - self.bottom())
            .max(self.y - other.bottom())
            .max(0) as f64;
        dx.hypot(dy)
    }

    /// Part of the rectangle inside a `width x height` image.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<Rect> {
        Rect::from_corners(
            self.x.max(0),
            self.y.max(0),
            self.right().min(width as i32),
            self.bottom().min(height as i32),
        )
    }

    /// Grows every side by `d` pixels.
    pub fn expand(&self, d: i32) -> Rect {
        Rect {
            x: self.x - d,
            y: self.y - d,
            w: self.w + 2 * d,
            h: self.h + 2 * d,
        }
    }

    pub fn translate(&self, dx: i32, dy: i32) -> Rect {
        Rect {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Bounding box of a non-empty set of pixel coordinates.
    pub fn bounding(points: impl IntoIterator<Item = (usize, usize)>) -> Option<Rect> {
        let mut it = points.into_iter();
        let (x, y) = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (x, y, x, y);
        for (x, y) in it {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Rect::from_corners(x0 as i32, y0 as i32, x1 as i32 + 1, y1 as i32 + 1)
    }
}

/// ITU-R BT.601 luma of an RGB triple in `[0, 1]`.
pub fn rgb_to_gray(r: f32, g: f32, b: f32) -> Result<f32> {
    for v in [r, g, b] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Range(v));
        }
    }
    Ok((0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
}

fn decode_gray(img: DynamicImage) -> (usize, usize, Vec<f32>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p[0] as f32 / 255.0).collect(),
        other => {
            let rgb: RgbImage = other.to_rgb8();
            rgb.pixels()
                .map(|p| {
                    rgb_to_gray(
                        p[0] as f32 / 255.0,
                        p[1] as f32 / 255.0,
                        p[2] as f32 / 255.0,
                    )
                    .expect("8-bit channels are in range")
                })
                .collect()
        }
    };
    (w, h, pixels)
}

/// Lists files in `dir` whose names match `pattern`, in lexicographic order.
pub fn list_frame_files(dir: &Path, pattern: &str) -> Result<Vec<PathBuf>> {
    let pattern = glob::Pattern::new(pattern)
        .map_err(|e| Error::InvalidConfig(format!("bad frame pattern {pattern:?}: {e}")))?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| p.is_file())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| pattern.matches(n))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every frame matching `pattern` in `dir`, ordered by file name.
pub fn load_frame_sequence(dir: impl AsRef<Path>, pattern: &str) -> Result<Vec<Frame>> {
    let dir = dir.as_ref();
    let files = list_frame_files(dir, pattern)?;
    if files.is_empty() {
        return Err(Error::NoFrames(dir.to_path_buf()));
    }
    let mut frames: Vec<Frame> = Vec::with_capacity(files.len());
    for (index, path) in files.iter().enumerate() {
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let img = image::open(path).map_err(|e| Error::Decode {
            name: name.clone(),
            reason: e.to_string(),
        })?;
        let (w, h, pixels) = decode_gray(img);
        if let Some(first) = frames.first() {
            if (w, h) != first.dims() {
                return Err(Error::InconsistentSequence {
                    name,
                    want_w: first.width(),
                    want_h: first.height(),
                    got_w: w,
                    got_h: h,
                });
            }
        }
        frames.push(Frame::new(index, w, h, pixels)?);
    }
    Ok(frames)
}

/// Writes a boolean mask as a black/white PNG.
pub fn save_mask_png(
    mask: &[bool],
    width: usize,
    height: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([if mask[y as usize * width + x as usize] {
            255
        } else {
            0
        }])
    });
    img.save(path)?;
    Ok(())
}
