//! Box overlays on frames.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::imaging::{Frame, Rect};

pub const TORSO_COLOR: Rgb<u8> = Rgb([255, 64, 0]);
pub const TEXT_COLOR: Rgb<u8> = Rgb([0, 220, 60]);
pub const STROKE: i32 = 2;

/// Gray frame as an RGB image.
pub fn frame_to_rgb(frame: &Frame) -> RgbImage {
    RgbImage::from_fn(frame.width() as u32, frame.height() as u32, |x, y| {
        let v = (frame.get(x as usize, y as usize) * 255.0).round() as u8;
        Rgb([v, v, v])
    })
}

/// Recolours the `STROKE`-pixel inner border of `rect`, clipped to the image.
pub fn draw_rect(img: &mut RgbImage, rect: &Rect, color: Rgb<u8>) {
    let Some(r) = rect.clamp_to(img.width() as usize, img.height() as usize) else {
        return;
    };
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            let edge = x - rect.x < STROKE
                || rect.right() - 1 - x < STROKE
                || y - rect.y < STROKE
                || rect.bottom() - 1 - y < STROKE;
            if edge {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

pub fn overlay_image(frame: &Frame, torsos: &[Rect], texts: &[Rect]) -> RgbImage {
    let mut img = frame_to_rgb(frame);
    for r in torsos {
        draw_rect(&mut img, r, TORSO_COLOR);
    }
    for r in texts {
        draw_rect(&mut img, r, TEXT_COLOR);
    }
    img
}

pub fn render_overlay(
    frame: &Frame,
    torsos: &[Rect],
    texts: &[Rect],
    out: impl AsRef<Path>,
) -> Result<()> {
    overlay_image(frame, torsos, texts).save(out)?;
    Ok(())
}
