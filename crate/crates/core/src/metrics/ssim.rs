//! Single-scale SSIM on grayscale frames with a Gaussian window.
//!
//! Local statistics are evaluated at every pixel; the window is
//! edge-replicated at the borders.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::separable;
use crate::image::{ensure_same_dims, to_grayscale, Frame, GrayFrame, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    /// Window side length in pixels; odd.
    pub window: usize,
    pub window_sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            window_sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
            c3: 0.03 * 0.03 / 2.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::param("ssim.window", "must be odd"));
        }
        if !(self.window_sigma.is_finite() && self.window_sigma > 0.0) {
            return Err(Error::param("ssim.window_sigma", "must be > 0"));
        }
        for (name, c) in [("ssim.c1", self.c1), ("ssim.c2", self.c2), ("ssim.c3", self.c3)] {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        Ok(())
    }

    /// Normalized 1D window taps.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as isize;
        let s2 = 2.0 * self.window_sigma * self.window_sigma;
        let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / s2).exp()).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / sum).collect()
    }
}

/// Per-pixel luminance, contrast and structure terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimTerms {
    pub luminance: Plane,
    pub contrast: Plane,
    pub structure: Plane,
}

impl SsimTerms {
    /// `luminance * contrast * structure` per pixel.
    pub fn quality_map(&self) -> Plane {
        let data = self
            .luminance
            .data()
            .iter()
            .zip(self.contrast.data())
            .zip(self.structure.data())
            .map(|((l, c), s)| l * c * s)
            .collect();
        Plane::from_raw(self.luminance.width(), self.luminance.height(), data)
    }
}

pub fn ssim_terms(a: &GrayFrame, b: &GrayFrame, params: &SsimParams) -> Result<SsimTerms> {
    params.validate()?;
    ensure_same_dims(a.dims(), b.dims())?;
    let taps = params.taps();
    let (w, h) = a.dims();
    let product = |x: &Plane, y: &Plane| {
        Plane::from_raw(w, h, x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect())
    };
    let mu_a = separable(a, &taps);
    let mu_b = separable(b, &taps);
    let e_aa = separable(&product(a, a), &taps);
    let e_bb = separable(&product(b, b), &taps);
    let e_ab = separable(&product(a, b), &taps);

    let n = w * h;
    let mut luminance = vec![0.0; n];
    let mut contrast = vec![0.0; n];
    let mut structure = vec![0.0; n];
    luminance
        .par_iter_mut()
        .zip(contrast.par_iter_mut())
        .zip(structure.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((l, c), s))| {
            let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
            let var_a = (e_aa.data()[i] - ma * ma).max(0.0);
            let var_b = (e_bb.data()[i] - mb * mb).max(0.0);
            let cov = e_ab.data()[i] - ma * mb;
            let (sa, sb) = (var_a.sqrt(), var_b.sqrt());
            *l = (2.0 * ma * mb + params.c1) / (ma * ma + mb * mb + params.c1);
            *c = (2.0 * sa * sb + params.c2) / (var_a + var_b + params.c2);
            *s = (cov + params.c3) / (sa * sb + params.c3);
        });
    Ok(SsimTerms {
        luminance: Plane::from_raw(w, h, luminance),
        contrast: Plane::from_raw(w, h, contrast),
        structure: Plane::from_raw(w, h, structure),
    })
}

/// Mean local quality over all pixel positions of two gray frames.
pub fn ssim_gray(a: &GrayFrame, b: &GrayFrame, params: &SsimParams) -> Result<f64> {
    Ok(ssim_terms(a, b, params)?.quality_map().mean())
}

/// SSIM of two color frames, computed on their grayscale versions.
pub fn ssim(a: &Frame, b: &Frame, params: &SsimParams) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    ssim_gray(&to_grayscale(a), &to_grayscale(b), params)
}

/// Mean per-frame SSIM of two videos.
pub fn ssim_video(a: &[Frame], b: &[Frame], params: &SsimParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidData(format!("frame counts differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::TooShort {
            what: "frame sequence",
            min: 1,
            actual: 0,
        });
    }
    let per_frame: Vec<f64> = a
        .par_iter()
        .zip(b)
        .map(|(x, y)| ssim(x, y, params))
        .collect::<Result<_>>()?;
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}
