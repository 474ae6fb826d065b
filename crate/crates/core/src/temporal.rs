//! Motion-adaptive temporal smoothing followed by an edge-preserving
//! bilateral pass.
//!
//! Per frame `t >= 1`: estimate flow `t-1 -> t`, warp every frame in the
//! history window into the current coordinates, average the window with
//! geometric weights, blend with the current frame using a per-pixel `alpha`
//! that shrinks with motion, push the blend into the history, and output the
//! bilateral-filtered blend. Frame 0 only goes through the bilateral filter.

use std::collections::VecDeque;

use multiversion::multiversion;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{estimate_flow, flow_magnitude, warp_frame, FlowField, FlowParams};
use crate::image::{ensure_same_dims, to_grayscale, Frame, GrayFrame, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    /// Weight of the motion-compensated history at zero motion.
    pub alpha_base: f64,
    pub adaptive: bool,
    /// Flow magnitude (pixels) at which the adaptive part of alpha halves.
    pub motion_scale: f64,
    pub alpha_floor: f64,
    /// Number of blended frames kept as history.
    pub window_size: usize,
    /// Ratio between the weights of consecutive history frames.
    pub window_decay: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            alpha_base: 0.9,
            adaptive: true,
            motion_scale: 4.0,
            alpha_floor: 0.1,
            window_size: 5,
            window_decay: 0.5,
        }
    }
}

impl SmootherConfig {
    /// Fixed-alpha configuration with a single-frame history.
    pub fn fixed(alpha: f64) -> Self {
        SmootherConfig {
            alpha_base: alpha,
            adaptive: false,
            alpha_floor: 0.0,
            window_size: 1,
            ..SmootherConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_base) {
            return Err(Error::param("alpha_base", "must lie in [0, 1]"));
        }
        if !(self.motion_scale.is_finite() && self.motion_scale > 0.0) {
            return Err(Error::param("motion_scale", "must be > 0"));
        }
        if !(self.alpha_floor >= 0.0 && self.alpha_floor <= self.alpha_base) {
            return Err(Error::param("alpha_floor", "must lie in [0, alpha_base]"));
        }
        if self.window_size < 1 {
            return Err(Error::param("window_size", "must be >= 1"));
        }
        if !(self.window_decay > 0.0 && self.window_decay <= 1.0) {
            return Err(Error::param("window_decay", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BilateralParams {
    pub sigma_spatial: f64,
    /// Range sigma on the `[0, 1]` intensity scale.
    pub sigma_range: f64,
    pub radius: usize,
}

impl Default for BilateralParams {
    fn default() -> Self {
        BilateralParams {
            sigma_spatial: 3.0,
            sigma_range: 0.08,
            radius: 6,
        }
    }
}

impl BilateralParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_spatial.is_finite() && self.sigma_spatial > 0.0) {
            return Err(Error::param("bilateral.sigma_spatial", "must be > 0"));
        }
        if !(self.sigma_range.is_finite() && self.sigma_range > 0.0) {
            return Err(Error::param("bilateral.sigma_range", "must be > 0"));
        }
        let min_radius = (2.0 * self.sigma_spatial).ceil() as usize;
        if self.radius < 1 || self.radius < min_radius {
            return Err(Error::param(
                "bilateral.radius",
                format!("must be >= max(1, ceil(2 sigma_spatial)) = {}", min_radius.max(1)),
            ));
        }
        Ok(())
    }
}

/// `alpha(p) = floor + (base - floor) * 2^(-|flow(p)| / motion_scale)`, or
/// `base` everywhere when the config is not adaptive.
pub fn adaptive_alpha(alpha_base: f64, motion_mag: &Plane, cfg: &SmootherConfig) -> Plane {
    if !cfg.adaptive {
        return Plane::filled(motion_mag.width(), motion_mag.height(), alpha_base);
    }
    let floor = cfg.alpha_floor.min(alpha_base);
    motion_mag.map(|m| floor + (alpha_base - floor) * (-m.max(0.0) / cfg.motion_scale).exp2())
}

/// `alpha * warped + (1 - alpha) * current`, per pixel and channel.
pub fn temporal_blend(warped_history: &Frame, current: &Frame, alpha_map: &Plane) -> Result<Frame> {
    ensure_same_dims(current.dims(), warped_history.dims())?;
    ensure_same_dims(current.dims(), alpha_map.dims())?;
    let data = warped_history
        .data()
        .chunks_exact(3)
        .zip(current.data().chunks_exact(3))
        .zip(alpha_map.data())
        .flat_map(|((h, c), &a)| {
            let a = a.clamp(0.0, 1.0);
            [0, 1, 2].map(|k| a * h[k] + (1.0 - a) * c[k])
        })
        .collect();
    Frame::new(current.width(), current.height(), data)
}

/// Normalized weighted average of frames of equal size.
pub fn weighted_average(frames: &[(Frame, f64)]) -> Result<Frame> {
    let (first, _) = frames.first().ok_or(Error::TooShort {
        what: "history",
        min: 1,
        actual: 0,
    })?;
    let total: f64 = frames.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) || frames.iter().any(|(_, w)| *w < 0.0) {
        return Err(Error::param("weights", "must be non-negative with a positive sum"));
    }
    let mut acc = vec![0.0; first.data().len()];
    for (f, w) in frames {
        ensure_same_dims(first.dims(), f.dims())?;
        let w = w / total;
        for (a, v) in acc.iter_mut().zip(f.data()) {
            *a += w * v;
        }
    }
    Ok(Frame::from_raw(
        first.width(),
        first.height(),
        acc.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    ))
}

/// Geometric-weight average of a history window, most recent frame first.
/// Frames must already be aligned to the current frame.
pub fn history_reference(history: &[Frame], cfg: &SmootherConfig) -> Result<Frame> {
    if history.len() == 1 {
        return Ok(history[0].clone());
    }
    let weighted: Vec<(Frame, f64)> = history
        .iter()
        .enumerate()
        .map(|(k, f)| (f.clone(), cfg.window_decay.powi(k as i32)))
        .collect();
    weighted_average(&weighted)
}

/// `exp(coeff * d * d)` for `coeff <= 0`, written without branches or table
/// lookups so the per-row weight loop vectorizes. Relative error is below 1e-12.
#[inline(always)]
fn gaussian(coeff: f64, d: f64) -> f64 {
    // Adding 1.5 * 2^52 rounds to the nearest integer and leaves it in the low mantissa bits.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let t = (coeff * d * d).max(-708.0) * std::f64::consts::LOG2_E;
    let shifted = t + SHIFT;
    let n = shifted - SHIFT;
    let f = (t - n) * std::f64::consts::LN_2;
    let mut p = 1.0 / 3_628_800.0;
    for c in [
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * f + c;
    }
    let exponent = shifted.to_bits().wrapping_sub(SHIFT.to_bits()).wrapping_add(1023) << 52;
    p * f64::from_bits(exponent)
}

#[multiversion(targets("x86_64+avx2+fma", "x86_64+sse4.1"))]
fn range_weights(out: &mut [f64], centre: &[f64], neighbours: &[f64], spatial: f64, coeff: f64) {
    for ((o, &p), &q) in out.iter_mut().zip(centre).zip(neighbours) {
        *o = spatial * gaussian(coeff, p - q);
    }
}

/// `acc += weights * values`, or `acc += weights` without values.
#[multiversion(targets("x86_64+avx2+fma", "x86_64+sse4.1"))]
fn accumulate(acc: &mut [f64], weights: &[f64], values: Option<&[f64]>) {
    match values {
        Some(values) => {
            for ((a, &w), &v) in acc.iter_mut().zip(weights).zip(values) {
                *a += w * v;
            }
        }
        None => {
            for (a, &w) in acc.iter_mut().zip(weights) {
                *a += w;
            }
        }
    }
}

/// Edge-preserving bilateral filter. Range weights are computed on Rec.601
/// luminance and shared by all three channels; neighbors outside the frame
/// are edge-replicated.
pub fn bilateral_filter(frame: &Frame, params: &BilateralParams) -> Result<Frame> {
    params.validate()?;
    let (w, h) = frame.dims();
    let gray = to_grayscale(frame);
    let g = gray.data();
    let r = params.radius as isize;
    let side = (2 * r + 1) as usize;
    let spatial_coeff = -0.5 / (params.sigma_spatial * params.sigma_spatial);
    let range_coeff = -0.5 / (params.sigma_range * params.sigma_range);
    let spatial: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (spatial_coeff * (dx * dx + dy * dy) as f64).exp()))
        .collect();
    let planes = frame.planes();
    let ru = r as usize;
    // Edge-replicated rows padded by `r` on both sides.
    let pad = |data: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(h * (w + 2 * ru));
        for line in data.chunks_exact(w) {
            out.extend((-r..w as isize + r).map(|x| line[x.clamp(0, w as isize - 1) as usize]));
        }
        out
    };
    let pw = w + 2 * ru;
    let padded = [pad(g), pad(planes[0].data()), pad(planes[1].data()), pad(planes[2].data())];

    let mut out = vec![0.0; w * h * 3];
    out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        let centre = &g[y * w..(y + 1) * w];
        let mut wts = vec![0.0; w];
        let mut acc = [vec![0.0; w], vec![0.0; w], vec![0.0; w], vec![0.0; w]];
        for (j, dy) in (-r..=r).enumerate() {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            for (i, &ws) in spatial[j * side..(j + 1) * side].iter().enumerate() {
                let lo = yy * pw + i;
                range_weights(&mut wts, centre, &padded[0][lo..lo + w], ws, range_coeff);
                let [wsum, a0, a1, a2] = &mut acc;
                accumulate(wsum, &wts, None);
                for (a, c) in [a0, a1, a2].into_iter().zip(&padded[1..]) {
                    accumulate(a, &wts, Some(&c[lo..lo + w]));
                }
            }
        }
        for x in 0..w {
            for c in 0..3 {
                row[x * 3 + c] = (acc[c + 1][x] / acc[0][x]).clamp(0.0, 1.0);
            }
        }
    });
    Ok(Frame::from_raw(w, h, out))
}

/// Streaming smoother; owns its history window.
#[derive(Debug, Clone)]
pub struct Smoother {
    flow_params: FlowParams,
    cfg: SmootherConfig,
    bilateral: BilateralParams,
    history: VecDeque<Frame>,
    prev_gray: Option<GrayFrame>,
}

impl Smoother {
    pub fn new(flow_params: FlowParams, cfg: SmootherConfig, bilateral: BilateralParams) -> Result<Self> {
        flow_params.validate()?;
        cfg.validate()?;
        bilateral.validate()?;
        Ok(Smoother {
            flow_params,
            cfg,
            bilateral,
            history: VecDeque::with_capacity(cfg.window_size + 1),
            prev_gray: None,
        })
    }

    /// Smooths the next frame, estimating motion from the previous input.
    ///
    /// Frames smaller than the flow analysis window are treated as static.
    pub fn push(&mut self, frame: &Frame) -> Result<Frame> {
        let gray = to_grayscale(frame);
        let flow = match &self.prev_gray {
            None => None,
            Some(prev) => {
                ensure_same_dims(prev.dims(), gray.dims())?;
                let (w, h) = gray.dims();
                if w < self.flow_params.window_size || h < self.flow_params.window_size {
                    Some(FlowField::zeros(w, h))
                } else {
                    Some(estimate_flow(prev, &gray, &self.flow_params)?)
                }
            }
        };
        self.prev_gray = Some(gray);
        self.advance(frame, flow.as_ref())
    }

    /// Smooths the next frame with a precomputed flow from the previous frame.
    /// `flow` is ignored for the first frame.
    pub fn push_with_flow(&mut self, frame: &Frame, flow: &FlowField) -> Result<Frame> {
        self.prev_gray = Some(to_grayscale(frame));
        let flow = if self.history.is_empty() { None } else { Some(flow) };
        self.advance(frame, flow)
    }

    fn advance(&mut self, frame: &Frame, flow: Option<&FlowField>) -> Result<Frame> {
        let Some(flow) = flow.filter(|_| !self.history.is_empty()) else {
            self.history.clear();
            self.history.push_front(frame.clone());
            return bilateral_filter(frame, &self.bilateral);
        };
        ensure_same_dims(self.history[0].dims(), frame.dims())?;
        ensure_same_dims(frame.dims(), flow.dims())?;
        for past in self.history.iter_mut() {
            *past = warp_frame(past, flow)?;
        }
        let reference = history_reference(self.history.make_contiguous(), &self.cfg)?;
        let alpha = adaptive_alpha(self.cfg.alpha_base, &flow_magnitude(flow), &self.cfg);
        let blended = temporal_blend(&reference, frame, &alpha)?;
        self.history.push_front(blended.clone());
        self.history.truncate(self.cfg.window_size);
        bilateral_filter(&blended, &self.bilateral)
    }
}

fn check_uniform(frames: &[Frame]) -> Result<()> {
    let first = frames.first().ok_or(Error::TooShort {
        what: "frame sequence",
        min: 1,
        actual: 0,
    })?;
    for f in frames {
        ensure_same_dims(first.dims(), f.dims())?;
    }
    Ok(())
}

/// Runs the smoother over a whole sequence; output length equals input length.
pub fn smooth_sequence(
    frames: &[Frame],
    flow_params: &FlowParams,
    cfg: &SmootherConfig,
    bilateral: &BilateralParams,
) -> Result<Vec<Frame>> {
    check_uniform(frames)?;
    let mut smoother = Smoother::new(*flow_params, *cfg, *bilateral)?;
    frames.iter().map(|f| smoother.push(f)).collect()
}

/// Same as [`smooth_sequence`] with flows computed beforehand, e.g. by
/// [`crate::flow::estimate_sequence_flows`]; `flows[t - 1]` maps frame
/// `t - 1` onto frame `t`.
pub fn smooth_sequence_with_flows(
    frames: &[Frame],
    flows: &[FlowField],
    cfg: &SmootherConfig,
    bilateral: &BilateralParams,
) -> Result<Vec<Frame>> {
    check_uniform(frames)?;
    if flows.len() + 1 != frames.len() {
        return Err(Error::InvalidData(format!(
            "{} frames need {} flows, got {}",
            frames.len(),
            frames.len() - 1,
            flows.len()
        )));
    }
    let mut smoother = Smoother::new(FlowParams::default(), *cfg, *bilateral)?;
    let mut out = Vec::with_capacity(frames.len());
    out.push(smoother.push_with_flow(&frames[0], &FlowField::zeros(1, 1))?);
    for (f, flow) in frames[1..].iter().zip(flows) {
        out.push(smoother.push_with_flow(f, flow)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Frame {
        Frame::from_gray(&Plane::from_fn(w, h, f))
    }

    #[test]
    fn alpha_map_shape() {
        let cfg = SmootherConfig {
            alpha_floor: 0.0,
            ..SmootherConfig::default()
        };
        let mags = Plane::new(3, 1, vec![0.0, 4.0, 40.0]).unwrap();
        let a = adaptive_alpha(0.8, &mags, &cfg);
        assert!((a.get(0, 0) - 0.8).abs() < 1e-12);
        assert!((a.get(1, 0) - 0.4).abs() < 1e-12);

        let cfg = SmootherConfig::default();
        let a = adaptive_alpha(0.9, &mags, &cfg);
        assert!((a.get(2, 0) - 0.1).abs() < 1e-3);

        let fixed = SmootherConfig::fixed(0.7);
        assert!(adaptive_alpha(0.7, &mags, &fixed).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn blend_endpoints_and_arithmetic() {
        let hist = Frame::filled(2, 2, [0.2; 3]);
        let cur = Frame::filled(2, 2, [0.6; 3]);
        let zero = temporal_blend(&hist, &cur, &Plane::filled(2, 2, 0.0)).unwrap();
        assert_eq!(zero, cur);
        let one = temporal_blend(&hist, &cur, &Plane::filled(2, 2, 1.0)).unwrap();
        assert_eq!(one, hist);
        let half = temporal_blend(&hist, &cur, &Plane::filled(2, 2, 0.5)).unwrap();
        assert!(half.data().iter().all(|v| (v - 0.4).abs() < 1e-12));
        assert!(temporal_blend(&hist, &Frame::filled(3, 2, [0.0; 3]), &Plane::filled(2, 2, 0.5)).is_err());
    }

    #[test]
    fn history_weights() {
        let cfg = SmootherConfig {
            window_decay: 0.5,
            ..SmootherConfig::default()
        };
        let a = Frame::filled(2, 1, [1.0; 3]);
        let b = Frame::filled(2, 1, [0.0; 3]);
        assert_eq!(history_reference(&[a.clone()], &cfg).unwrap(), a);
        assert_eq!(history_reference(&[a.clone(), a.clone()], &cfg).unwrap(), a);
        let r = history_reference(&[a, b], &cfg).unwrap();
        assert!(r.data().iter().all(|v| (v - 2.0 / 3.0).abs() < 1e-6));
        assert!(history_reference(&[], &cfg).is_err());
    }

    #[test]
    fn bilateral_constant_and_edge() {
        let p = BilateralParams::default();
        let c = Frame::filled(10, 8, [0.3, 0.5, 0.7]);
        let out = bilateral_filter(&c, &p).unwrap();
        assert!(c.max_abs_diff(&out).unwrap() < 1e-9);

        let step = gray(16, 8, |x, _| if x < 8 { 0.0 } else { 1.0 });
        let p = BilateralParams {
            sigma_range: 0.1,
            ..BilateralParams::default()
        };
        let out = bilateral_filter(&step, &p).unwrap();
        let contrast = out.pixel(8, 4)[0] - out.pixel(7, 4)[0];
        assert!(contrast >= 0.9);
    }

    #[test]
    fn bilateral_param_checks() {
        let bad = BilateralParams {
            sigma_spatial: 4.0,
            radius: 6,
            ..BilateralParams::default()
        };
        assert!(bad.validate().is_err());
        assert!(BilateralParams::default().validate().is_ok());
    }

    #[test]
    fn single_frame_sequence_is_bilateral_only() {
        let f = gray(20, 20, |x, y| ((x * 3 + y * 5) % 7) as f64 / 7.0);
        let out = smooth_sequence(
            &[f.clone()],
            &FlowParams::default(),
            &SmootherConfig::default(),
            &BilateralParams::default(),
        )
        .unwrap();
        assert_eq!(out, vec![bilateral_filter(&f, &BilateralParams::default()).unwrap()]);
    }

    #[test]
    fn mismatched_sequence_rejected() {
        let frames = [Frame::filled(20, 20, [0.5; 3]), Frame::filled(21, 20, [0.5; 3])];
        assert!(smooth_sequence(
            &frames,
            &FlowParams::default(),
            &SmootherConfig::default(),
            &BilateralParams::default()
        )
        .is_err());
        assert!(smooth_sequence(&[], &FlowParams::default(), &SmootherConfig::default(), &BilateralParams::default()).is_err());
    }

    #[test]
    fn config_checks() {
        assert!(SmootherConfig::default().validate().is_ok());
        let bad = SmootherConfig {
            alpha_floor: 0.95,
            ..SmootherConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SmootherConfig {
            window_size: 0,
            ..SmootherConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
