//! Deterministic synthetic sequences used as test fixtures.
//!
//! Levels and amplitudes are given in 8-bit units (0..=255) because the
//! stability metrics are defined on 8-bit intensities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, GaussianKernel};
use crate::image::{Frame, Plane};

/// Band-limited random texture normalized to `[0, 1]`.
pub fn smooth_texture(width: usize, height: usize, sigma: f64, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Plane::from_fn(width, height, |_, _| rng.random::<f64>());
    let blurred = match GaussianKernel::new(sigma) {
        Ok(k) => gaussian_blur(&noise, &k),
        Err(_) => noise,
    };
    let (lo, hi) = blurred.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    blurred.map(|v| (v - lo) / span)
}

fn gray_frame(level: &Plane) -> Frame {
    Frame::from_gray(&level.map(|v| v / 255.0))
}

pub fn constant(width: usize, height: usize, frames: usize, rgb: [f64; 3]) -> Vec<Frame> {
    vec![Frame::filled(width, height, rgb); frames]
}

/// Static scene whose global brightness toggles between `base` and
/// `base + amp` every `period` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlickerSpec {
    pub base: f64,
    pub amp: f64,
    pub period: usize,
    /// Peak-to-peak amplitude of a static texture added to the scene.
    pub texture: f64,
    pub seed: u64,
}

impl Default for FlickerSpec {
    fn default() -> Self {
        FlickerSpec {
            base: 130.0,
            amp: 50.0,
            period: 1,
            texture: 0.0,
            seed: 0,
        }
    }
}

pub fn flicker(width: usize, height: usize, frames: usize, spec: &FlickerSpec) -> Result<Vec<Frame>> {
    if spec.period == 0 {
        return Err(Error::param("period", "must be >= 1"));
    }
    let tex = smooth_texture(width, height, 2.0, spec.seed);
    Ok((0..frames)
        .map(|t| {
            let level = spec.base + if (t / spec.period) % 2 == 1 { spec.amp } else { 0.0 };
            gray_frame(&tex.map(|v| level + spec.texture * (v - 0.5)))
        })
        .collect())
}

/// Static textured scene with an i.i.d. uniform brightness offset in
/// `[-amp, amp]` per frame.
pub fn jitter(width: usize, height: usize, frames: usize, base: f64, amp: f64, texture: f64, seed: u64) -> Vec<Frame> {
    let tex = smooth_texture(width, height, 2.0, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..frames)
        .map(|_| {
            let offset = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
            gray_frame(&tex.map(|v| base + offset + texture * (v - 0.5)))
        })
        .collect()
}

/// Ground-truth placement of the moving square in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquarePosition {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingSquareSpec {
    pub size: usize,
    /// Horizontal speed, pixels per frame.
    pub speed: usize,
    pub background: f64,
    pub foreground: f64,
    /// Peak-to-peak texture amplitude on both square and background.
    pub texture: f64,
    pub seed: u64,
}

impl Default for MovingSquareSpec {
    fn default() -> Self {
        MovingSquareSpec {
            size: 32,
            speed: 8,
            background: 40.0,
            foreground: 220.0,
            texture: 0.0,
            seed: 0,
        }
    }
}

pub fn moving_square(
    width: usize,
    height: usize,
    frames: usize,
    spec: &MovingSquareSpec,
) -> Result<(Vec<Frame>, Vec<SquarePosition>)> {
    let margin = spec.speed.max(4);
    let travel = spec.speed * frames.saturating_sub(1);
    if spec.size + 2 * margin + travel > width || spec.size + 2 > height {
        return Err(Error::param(
            "size",
            format!(
                "a {0}px square moving {1}px/frame for {frames} frames does not fit in {width}x{height}",
                spec.size, spec.speed
            ),
        ));
    }
    let bg_tex = smooth_texture(width, height, 2.0, spec.seed);
    let fg_tex = smooth_texture(spec.size, spec.size, 2.0, spec.seed.wrapping_add(1));
    let y = (height - spec.size) / 2;
    let mut out = Vec::with_capacity(frames);
    let mut truth = Vec::with_capacity(frames);
    for t in 0..frames {
        let x0 = margin + t * spec.speed;
        let level = Plane::from_fn(width, height, |x, yy| {
            if (x0..x0 + spec.size).contains(&x) && (y..y + spec.size).contains(&yy) {
                spec.foreground + spec.texture * (fg_tex.get(x - x0, yy - y) - 0.5)
            } else {
                spec.background + spec.texture * (bg_tex.get(x, yy) - 0.5)
            }
        });
        out.push(gray_frame(&level));
        truth.push(SquarePosition {
            frame: t,
            x: x0,
            y,
            size: spec.size,
        });
    }
    Ok((out, truth))
}

/// Smooth texture translated by `(dx, dy)` whole pixels per frame.
pub fn textured_translation(
    width: usize,
    height: usize,
    frames: usize,
    dx: i64,
    dy: i64,
    sigma: f64,
    seed: u64,
) -> Vec<Frame> {
    let steps = frames.saturating_sub(1) as i64;
    let pad_x = (dx.abs() * steps) as usize;
    let pad_y = (dy.abs() * steps) as usize;
    let canvas = smooth_texture(width + pad_x, height + pad_y, sigma, seed);
    // Content at canvas position p shows up at p + t * (dx, dy) in frame t.
    let ox = if dx > 0 { pad_x as i64 } else { 0 };
    let oy = if dy > 0 { pad_y as i64 } else { 0 };
    (0..frames as i64)
        .map(|t| {
            let level = Plane::from_fn(width, height, |x, y| {
                let cx = x as i64 - t * dx + ox;
                let cy = y as i64 - t * dy + oy;
                40.0 + 170.0 * canvas.get(cx as usize, cy as usize)
            });
            gray_frame(&level)
        })
        .collect()
}

/// Colored scene with fine detail: a fine texture over a coarse color layout.
pub fn detailed_scene(width: usize, height: usize, seed: u64) -> Frame {
    let fine = smooth_texture(width, height, 0.8, seed);
    let coarse = [
        smooth_texture(width, height, 8.0, seed.wrapping_add(1)),
        smooth_texture(width, height, 8.0, seed.wrapping_add(2)),
        smooth_texture(width, height, 8.0, seed.wrapping_add(3)),
    ];
    Frame::from_fn(width, height, |x, y| {
        let d = 0.35 * (fine.get(x, y) - 0.5);
        [0, 1, 2].map(|c| 0.25 + 0.4 * coarse[c].get(x, y) + d)
    })
}

/// A stand-in for a relit frame: directional gain and warm tint over a
/// blurred copy of `frame`.
pub fn relit_version(frame: &Frame, blur_sigma: f64, gain: f64) -> Frame {
    let (w, h) = frame.dims();
    let planes = frame.planes();
    let blurred: Vec<Plane> = match GaussianKernel::new(blur_sigma) {
        Ok(k) => planes.iter().map(|p| gaussian_blur(p, &k)).collect(),
        Err(_) => planes.to_vec(),
    };
    let tint = [1.08, 1.0, 0.86];
    Frame::from_fn(w, h, |x, y| {
        let light = 1.0 + gain * (x as f64 / w.max(2) as f64 - 0.5);
        [0, 1, 2].map(|c| blurred[c].get(x, y) * light * tint[c])
    })
}

/// A static detailed scene and a relit copy of it: blurred by `blur_sigma`,
/// lit with [`relit_version`], and brightened by `flicker` 8-bit levels on
/// every odd frame.
pub fn relit_pair(
    width: usize,
    height: usize,
    frames: usize,
    blur_sigma: f64,
    gain: f64,
    flicker: f64,
    seed: u64,
) -> (Vec<Frame>, Vec<Frame>) {
    let scene = detailed_scene(width, height, seed);
    let lit = relit_version(&scene, blur_sigma, gain);
    let original = vec![scene; frames];
    let relit = (0..frames)
        .map(|t| {
            let offset = if t % 2 == 1 { flicker / 255.0 } else { 0.0 };
            Frame::from_fn(width, height, |x, y| lit.pixel(x, y).map(|v| v + offset))
        })
        .collect();
    (original, relit)
}
