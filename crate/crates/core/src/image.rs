//! Frame containers and the resampling/grayscale primitives shared by every
//! stage of the pipeline.
//!
//! All working data is `f64` in `[0, 1]`. Quantization to 8 bits only happens
//! at the file boundary (see [`crate::io`]) or where a metric is defined on
//! 8-bit values.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A single-channel `f64` plane stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Luminance frame in `[0, 1]`.
pub type GrayFrame = Plane;

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("dimensions", "width and height must be >= 1"));
        }
        if data.len() != width * height {
            return Err(Error::InvalidData(format!(
                "plane {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite sample at index {i}")));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty plane");
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty plane");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Plane {
            width,
            height,
            data,
        }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with edge replication for out-of-range integer coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample at a continuous position, edge-replicated.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let (x0, x1, fx) = bilinear_taps(x, self.width);
        let (y0, y1, fy) = bilinear_taps(y, self.height);
        let w = self.width;
        let top = self.data[y0 * w + x0] * (1.0 - fx) + self.data[y0 * w + x1] * fx;
        let bot = self.data[y1 * w + x0] * (1.0 - fx) + self.data[y1 * w + x1] * fx;
        top * (1.0 - fy) + bot * fy
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise combination of two planes of equal size.
    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Result<Plane> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(Plane::from_raw(
            self.width,
            self.height,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize_bilinear(&self, new_width: usize, new_height: usize) -> Result<Plane> {
        check_target(new_width, new_height)?;
        let data = resample::<1>(
            &self.data,
            self.width,
            self.height,
            new_width,
            new_height,
        );
        Ok(Plane::from_raw(new_width, new_height, data))
    }
}

/// An interleaved RGB frame in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    /// Builds a frame from interleaved RGB samples, rejecting wrong lengths,
    /// non-finite values and values outside `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("dimensions", "width and height must be >= 1"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidData(format!(
                "frame {width}x{height} needs {} samples, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(i) = data
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidData(format!(
                "sample {i} = {} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty frame");
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Frame {
            width,
            height,
            data,
        }
    }

    /// Builds a frame from a per-pixel RGB function. Values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty frame");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Frame {
            width,
            height,
            data,
        }
    }

    /// Gray frame replicated into all three channels.
    pub fn from_gray(gray: &Plane) -> Self {
        let data = gray
            .data()
            .iter()
            .flat_map(|&v| {
                let v = v.clamp(0.0, 1.0);
                [v, v, v]
            })
            .collect();
        Frame {
            width: gray.width(),
            height: gray.height(),
            data,
        }
    }

    /// Assembles a frame from three planes, clamping to `[0, 1]`.
    pub fn from_planes(planes: &[Plane; 3]) -> Result<Self> {
        let dims = planes[0].dims();
        ensure_same_dims(dims, planes[1].dims())?;
        ensure_same_dims(dims, planes[2].dims())?;
        let mut data = Vec::with_capacity(dims.0 * dims.1 * 3);
        for i in 0..dims.0 * dims.1 {
            for p in planes {
                data.push(p.data()[i].clamp(0.0, 1.0));
            }
        }
        Ok(Frame {
            width: dims.0,
            height: dims.1,
            data,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Frame {
            width,
            height,
            data,
        }
    }

    /// Decodes interleaved 8-bit RGB.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::InvalidData(format!(
                "rgb8 buffer for {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                bytes.len()
            )));
        }
        Frame::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// Quantizes to interleaved 8-bit RGB (round to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    pub fn channel(&self, c: usize) -> Plane {
        assert!(c < 3);
        Plane::from_raw(
            self.width,
            self.height,
            self.data.iter().skip(c).step_by(3).copied().collect(),
        )
    }

    pub fn planes(&self) -> [Plane; 3] {
        [self.channel(0), self.channel(1), self.channel(2)]
    }

    /// Largest absolute per-sample difference between two frames of equal size.
    pub fn max_abs_diff(&self, other: &Frame) -> Result<f64> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> Result<f64> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64)
    }
}

/// Rec.601 luminance of a working-form frame.
pub fn to_grayscale(frame: &Frame) -> GrayFrame {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let data = frame
        .data
        .chunks_exact(3)
        .map(|p| (wr * p[0] + wg * p[1] + wb * p[2]).clamp(0.0, 1.0))
        .collect();
    Plane::from_raw(frame.width, frame.height, data)
}

/// Bilinear resize with pixel-center alignment. Aspect ratio is the caller's concern.
pub fn resize_bilinear(frame: &Frame, new_width: usize, new_height: usize) -> Result<Frame> {
    check_target(new_width, new_height)?;
    if frame.dims() == (new_width, new_height) {
        return Ok(frame.clone());
    }
    let data = resample::<3>(
        &frame.data,
        frame.width,
        frame.height,
        new_width,
        new_height,
    );
    Ok(Frame::from_raw(new_width, new_height, data))
}

/// Width that keeps the aspect ratio at `target_height`, rounded to an even
/// number of pixels (never below 1).
pub fn width_for_height(width: usize, height: usize, target_height: usize) -> usize {
    let w = (width as f64 * target_height as f64 / height as f64).round() as usize;
    let even = w - w % 2;
    even.max(1)
}

#[inline]
pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn ensure_same_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::dims(expected, actual));
    }
    Ok(())
}

fn check_target(w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(Error::param(
            "size",
            format!("target dimensions must be >= 1, got {w}x{h}"),
        ));
    }
    Ok(())
}

/// Integer taps and fractional weight for a continuous coordinate, edge-replicated.
#[inline]
fn bilinear_taps(pos: f64, len: usize) -> (usize, usize, f64) {
    let max = (len - 1) as f64;
    let p = pos.clamp(0.0, max);
    let i0 = p.floor();
    let frac = p - i0;
    let i0 = i0 as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, frac)
}

fn resample<const C: usize>(
    src: &[f64],
    sw: usize,
    sh: usize,
    dw: usize,
    dh: usize,
) -> Vec<f64> {
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    let xtaps: Vec<(usize, usize, f64)> = (0..dw)
        .map(|x| bilinear_taps((x as f64 + 0.5) * sx - 0.5, sw))
        .collect();
    let mut out = vec![0.0; dw * dh * C];
    out.par_chunks_mut(dw * C).enumerate().for_each(|(y, row)| {
        let (y0, y1, fy) = bilinear_taps((y as f64 + 0.5) * sy - 0.5, sh);
        let r0 = &src[y0 * sw * C..(y0 + 1) * sw * C];
        let r1 = &src[y1 * sw * C..(y1 + 1) * sw * C];
        for (x, &(x0, x1, fx)) in xtaps.iter().enumerate() {
            for c in 0..C {
                let top = r0[x0 * C + c] * (1.0 - fx) + r0[x1 * C + c] * fx;
                let bot = r1[x0 * C + c] * (1.0 - fx) + r1[x1 * C + c] * fx;
                row[x * C + c] = top * (1.0 - fy) + bot * fy;
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_weights() {
        let white = to_grayscale(&Frame::filled(3, 2, [1.0; 3]));
        assert!(white.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let black = to_grayscale(&Frame::filled(3, 2, [0.0; 3]));
        assert!(black.data().iter().all(|&v| v == 0.0));
        let green = to_grayscale(&Frame::filled(3, 2, [0.0, 1.0, 0.0]));
        assert!(green.data().iter().all(|&v| (v - 0.587).abs() < 1e-12));
    }

    #[test]
    fn frame_validation() {
        assert!(Frame::new(2, 2, vec![0.5; 11]).is_err());
        assert!(Frame::new(1, 1, vec![0.5, 1.5, 0.0]).is_err());
        assert!(Frame::new(1, 1, vec![0.5, f64::NAN, 0.0]).is_err());
        assert!(Frame::new(0, 1, vec![]).is_err());
        assert!(Frame::new(1, 1, vec![0.0, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn resize_identity_and_checkerboard() {
        let f = Frame::from_fn(5, 4, |x, y| [x as f64 / 5.0, y as f64 / 4.0, 0.3]);
        assert_eq!(resize_bilinear(&f, 5, 4).unwrap(), f);

        let checker = Frame::from_fn(2, 2, |x, y| [((x + y) % 2) as f64; 3]);
        let one = resize_bilinear(&checker, 1, 1).unwrap();
        for v in one.pixel(0, 0) {
            assert!((v - 0.5).abs() < 1e-12);
        }
        assert!(resize_bilinear(&checker, 0, 3).is_err());
    }

    #[test]
    fn resize_ramp_matches_hand_evaluation() {
        // 4x4 -> 2x2 with pixel-center alignment samples source (0.5, 0.5), (2.5, 0.5), ...
        let ramp = Plane::from_fn(4, 4, |x, y| x as f64 + 10.0 * y as f64);
        let small = ramp.resize_bilinear(2, 2).unwrap();
        let expected = |sx: f64, sy: f64| sx + 10.0 * sy;
        assert!((small.get(0, 0) - expected(0.5, 0.5)).abs() < 1e-6);
        assert!((small.get(1, 0) - expected(2.5, 0.5)).abs() < 1e-6);
        assert!((small.get(0, 1) - expected(0.5, 2.5)).abs() < 1e-6);
        assert!((small.get(1, 1) - expected(2.5, 2.5)).abs() < 1e-6);
    }

    #[test]
    fn rgb8_quantization_bound() {
        let f = Frame::from_fn(7, 3, |x, y| {
            [x as f64 / 7.3, y as f64 / 3.1, (x * y) as f64 / 21.0]
        });
        let back = Frame::from_rgb8(7, 3, &f.to_rgb8()).unwrap();
        assert!(f.max_abs_diff(&back).unwrap() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn even_width_for_height() {
        assert_eq!(width_for_height(1920, 1080, 480), 852);
        assert_eq!(width_for_height(3, 3, 1), 1);
    }
}
