//! Lightness-prior anchoring, progressive guidance fusion, and LAB detail
//! fusion.
//!
//! All operations work in pixel space. Gaussian sigmas are in pixels of the
//! frame being processed; [`scale_sigma`] converts values tuned at 480 rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{lab_to_rgb, rgb_to_lab, LabFrame};
use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, GaussianKernel};
use crate::image::{ensure_same_dims, resize_bilinear, Frame, Plane};

/// Frame height at which the default sigmas are specified.
pub const REFERENCE_HEIGHT: usize = 480;

/// Scales a sigma tuned at [`REFERENCE_HEIGHT`] rows to `height` rows.
pub fn scale_sigma(sigma: f64, height: usize) -> f64 {
    sigma * height as f64 / REFERENCE_HEIGHT as f64
}

/// High-pass residual of a frame's L channel, in L units.
#[derive(Debug, Clone, PartialEq)]
pub struct LightnessResidual {
    pub width: usize,
    pub height: usize,
    pub delta_l: Vec<f64>,
}

impl LightnessResidual {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mean(&self) -> f64 {
        self.delta_l.iter().sum::<f64>() / self.delta_l.len() as f64
    }
}

/// `L - G_sigma * L` of the frame's CIELAB lightness.
pub fn lightness_residual(frame: &Frame, sigma_prior: f64) -> Result<LightnessResidual> {
    let kernel = GaussianKernel::new(sigma_prior).map_err(|_| Error::param("sigma_prior", "must be > 0"))?;
    let l = rgb_to_lab(frame).l_plane();
    let low = gaussian_blur(&l, &kernel);
    let (width, height) = l.dims();
    Ok(LightnessResidual {
        width,
        height,
        delta_l: l.data().iter().zip(low.data()).map(|(a, b)| a - b).collect(),
    })
}

/// Adds `gamma * delta_l` to the frame's lightness, clamps L to `[0, 100]`
/// and keeps chroma.
pub fn anchor_lightness(frame: &Frame, residual: &LightnessResidual, gamma: f64) -> Result<Frame> {
    ensure_same_dims(frame.dims(), residual.dims())?;
    if gamma == 0.0 {
        return Ok(frame.clone());
    }
    let mut lab = rgb_to_lab(frame);
    for (l, d) in lab.l.iter_mut().zip(&residual.delta_l) {
        *l = (*l + gamma * d).clamp(0.0, 100.0);
    }
    Ok(lab_to_rgb(&lab))
}

/// Direction of the progressive fusion update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// `c + lambda * (r - c)`: pulls toward the relit target, fully at lambda = 1.
    #[default]
    Convex,
    /// `c + lambda * (c - r)`: the sign-flipped update, kept for comparison.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    pub total_steps: usize,
    pub gamma: f64,
    pub sigma_prior: f64,
    pub mode: GuidanceMode,
}

impl Default for GuidanceSchedule {
    fn default() -> Self {
        GuidanceSchedule {
            total_steps: 25,
            gamma: 0.3,
            sigma_prior: 5.0,
            mode: GuidanceMode::Convex,
        }
    }
}

impl GuidanceSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 1 {
            return Err(Error::param("steps", "must be >= 1"));
        }
        if !self.gamma.is_finite() {
            return Err(Error::param("gamma", "must be finite"));
        }
        if !(self.sigma_prior.is_finite() && self.sigma_prior > 0.0) {
            return Err(Error::param("sigma_prior", "must be > 0"));
        }
        Ok(())
    }

    /// `lambda_t = 1 - t / T`.
    pub fn lambda(&self, step: usize) -> f64 {
        1.0 - step.min(self.total_steps) as f64 / self.total_steps as f64
    }
}

/// One fusion update per frame pair, clamped to `[0, 1]`.
pub fn progressive_fuse(
    consistent: &[Frame],
    relit_target: &[Frame],
    lambda: f64,
    mode: GuidanceMode,
) -> Result<Vec<Frame>> {
    check_pairs(consistent, relit_target)?;
    consistent
        .par_iter()
        .zip(relit_target)
        .map(|(c, r)| {
            let data = c
                .data()
                .iter()
                .zip(r.data())
                .map(|(&c, &r)| {
                    let v = match mode {
                        GuidanceMode::Convex => c + lambda * (r - c),
                        GuidanceMode::Literal => c + lambda * (c - r),
                    };
                    v.clamp(0.0, 1.0)
                })
                .collect();
            Ok(Frame::from_raw(c.width(), c.height(), data))
        })
        .collect()
}

/// Refines a fused video at a given guidance step.
pub trait Denoiser {
    fn denoise(&self, frames: &[Frame], step: usize) -> Result<Vec<Frame>>;
}

impl<F> Denoiser for F
where
    F: Fn(&[Frame], usize) -> Result<Vec<Frame>>,
{
    fn denoise(&self, frames: &[Frame], step: usize) -> Result<Vec<Frame>> {
        self(frames, step)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, frames: &[Frame], _step: usize) -> Result<Vec<Frame>> {
        Ok(frames.to_vec())
    }
}

/// Per-channel Gaussian blur; a cheap stand-in for a learned denoiser.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    kernel: GaussianKernel,
}

impl GaussianDenoiser {
    pub fn new(sigma: f64) -> Result<Self> {
        Ok(GaussianDenoiser {
            kernel: GaussianKernel::new(sigma)?,
        })
    }
}

impl Default for GaussianDenoiser {
    fn default() -> Self {
        GaussianDenoiser::new(1.0).expect("sigma 1 is valid")
    }
}

impl Denoiser for GaussianDenoiser {
    fn denoise(&self, frames: &[Frame], _step: usize) -> Result<Vec<Frame>> {
        frames
            .par_iter()
            .map(|f| {
                let [r, g, b] = f.planes();
                Frame::from_planes(&[r, g, b].map(|p| gaussian_blur(&p, &self.kernel)))
            })
            .collect()
    }
}

/// Runs `total_steps` rounds of fuse, anchor, denoise starting from the
/// input video. Residuals are taken from the input once, before step 0.
pub fn guidance_loop(
    input_video: &[Frame],
    relit_target: &[Frame],
    denoiser: &dyn Denoiser,
    schedule: &GuidanceSchedule,
) -> Result<Vec<Frame>> {
    schedule.validate()?;
    check_pairs(input_video, relit_target)?;
    let residuals = if schedule.gamma != 0.0 {
        input_video
            .par_iter()
            .map(|f| lightness_residual(f, schedule.sigma_prior))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut current = input_video.to_vec();
    for step in 0..schedule.total_steps {
        let fused = progressive_fuse(&current, relit_target, schedule.lambda(step), schedule.mode)?;
        let anchored = if residuals.is_empty() {
            fused
        } else {
            fused
                .par_iter()
                .zip(&residuals)
                .map(|(f, r)| anchor_lightness(f, r, schedule.gamma))
                .collect::<Result<Vec<_>>>()?
        };
        let refined = denoiser.denoise(&anchored, step)?;
        if refined.len() != anchored.len() {
            return Err(Error::InvalidData(format!(
                "denoiser returned {} frames for {}",
                refined.len(),
                anchored.len()
            )));
        }
        for (a, b) in anchored.iter().zip(&refined) {
            ensure_same_dims(a.dims(), b.dims())?;
        }
        current = refined;
    }
    Ok(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    /// `L_i + beta * (G*L_r - G*L_i)`: transfers the illumination difference.
    #[default]
    MeanCompensated,
    /// `L_i + beta * G*L_r`: adds the low-passed relit lightness outright.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabFuseConfig {
    pub beta: f64,
    pub sigma_illum: f64,
    pub mode: FuseMode,
}

impl Default for LabFuseConfig {
    fn default() -> Self {
        LabFuseConfig {
            beta: 0.3,
            sigma_illum: 15.0,
            mode: FuseMode::MeanCompensated,
        }
    }
}

impl LabFuseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::param("beta", format!("must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.sigma_illum.is_finite() && self.sigma_illum > 0.0) {
            return Err(Error::param("sigma_illum", "must be > 0"));
        }
        Ok(())
    }
}

/// Combines the input's lightness detail with the relit frame's low-frequency
/// lightness and its chroma.
pub fn lab_detail_fuse(input_frame: &Frame, relit_frame: &Frame, cfg: &LabFuseConfig) -> Result<Frame> {
    cfg.validate()?;
    ensure_same_dims(input_frame.dims(), relit_frame.dims())?;
    let kernel = GaussianKernel::new(cfg.sigma_illum)?;
    let li = rgb_to_lab(input_frame);
    let lr = rgb_to_lab(relit_frame);
    let low_r = gaussian_blur(&lr.l_plane(), &kernel);
    let beta = cfg.beta;
    let l: Vec<f64> = match cfg.mode {
        FuseMode::MeanCompensated => {
            let low_i = gaussian_blur(&li.l_plane(), &kernel);
            li.l.iter()
                .zip(low_r.data())
                .zip(low_i.data())
                .map(|((l, r), i)| (l + beta * (r - i)).clamp(0.0, 100.0))
                .collect()
        }
        FuseMode::Literal => li
            .l
            .iter()
            .zip(low_r.data())
            .map(|(l, r)| (l + beta * r).clamp(0.0, 100.0))
            .collect(),
    };
    let (w, h) = input_frame.dims();
    Ok(lab_to_rgb(&LabFrame::new(w, h, l, lr.a, lr.b)?))
}

/// Per-frame [`lab_detail_fuse`], resizing relit frames to the input size first.
pub fn fuse_sequence(input_video: &[Frame], relit_video: &[Frame], cfg: &LabFuseConfig) -> Result<Vec<Frame>> {
    cfg.validate()?;
    if input_video.len() != relit_video.len() {
        return Err(Error::InvalidData(format!(
            "frame counts differ: {} input vs {} relit",
            input_video.len(),
            relit_video.len()
        )));
    }
    input_video
        .par_iter()
        .zip(relit_video)
        .map(|(i, r)| {
            let (w, h) = i.dims();
            if r.dims() == (w, h) {
                lab_detail_fuse(i, r, cfg)
            } else {
                lab_detail_fuse(i, &resize_bilinear(r, w, h)?, cfg)
            }
        })
        .collect()
}

fn check_pairs(a: &[Frame], b: &[Frame]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidData(format!("sequence lengths differ: {} vs {}", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        ensure_same_dims(x.dims(), y.dims())?;
    }
    Ok(())
}

/// Convenience: the lightness channel of a frame as a plane.
pub fn lightness(frame: &Frame) -> Plane {
    rgb_to_lab(frame).l_plane()
}
