//! Light Stability Score: smoothness of the bright-pixel intensity, the
//! bright-pixel count, and the intensity derivative over time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize_u8, GrayFrame};

/// A per-frame scalar signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub label: String,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::TooShort {
                what: "time series",
                min: 1,
                actual: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("time series values must be finite".into()));
        }
        Ok(TimeSeries {
            label: label.into(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityParams {
    /// Brightness threshold in 8-bit units.
    pub tau: f64,
    #[serde(rename = "k_I")]
    pub k_i: f64,
    #[serde(rename = "k_C")]
    pub k_c: f64,
    #[serde(rename = "k_dI")]
    pub k_di: f64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        StabilityParams {
            tau: 125.0,
            k_i: 20.0,
            k_c: 20.0,
            k_di: 5.0,
        }
    }
}

impl StabilityParams {
    pub fn with_tau(self, tau: f64) -> Self {
        StabilityParams { tau, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=255.0).contains(&self.tau) {
            return Err(Error::param("tau", format!("must lie in [0, 255], got {}", self.tau)));
        }
        for (name, k) in [("k_I", self.k_i), ("k_C", self.k_c), ("k_dI", self.k_di)] {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub s_i: f64,
    pub s_c: f64,
    pub s_di: f64,
    pub s_ls: f64,
    pub u_norm_i: f64,
    pub u_norm_c: f64,
    pub u_norm_di: f64,
    pub intensity: TimeSeries,
    pub count: TimeSeries,
    pub derivative: TimeSeries,
}

/// Per frame: the mean 8-bit value of pixels at or above `tau` (0 when there
/// are none) and how many there are.
pub fn bright_signals(frames: &[GrayFrame], tau: f64) -> Result<(TimeSeries, TimeSeries)> {
    if frames.is_empty() {
        return Err(Error::TooShort {
            what: "frame sequence",
            min: 1,
            actual: 0,
        });
    }
    let per_frame: Vec<(f64, f64)> = frames
        .par_iter()
        .map(|f| {
            let (mut sum, mut count) = (0u64, 0u64);
            for &v in f.data() {
                let q = quantize_u8(v);
                if f64::from(q) >= tau {
                    sum += u64::from(q);
                    count += 1;
                }
            }
            let mean = if count > 0 { sum as f64 / count as f64 } else { 0.0 };
            (mean, count as f64)
        })
        .collect();
    Ok((
        TimeSeries::new("I_t", per_frame.iter().map(|p| p.0).collect())?,
        TimeSeries::new("C_t", per_frame.iter().map(|p| p.1).collect())?,
    ))
}

/// Forward differences `s[i+1] - s[i]`.
pub fn derivative_series(s: &TimeSeries) -> Result<TimeSeries> {
    if s.len() < 2 {
        return Err(Error::TooShort {
            what: "time series",
            min: 2,
            actual: s.len(),
        });
    }
    TimeSeries::new(
        format!("d{}", s.label),
        s.values.windows(2).map(|w| w[1] - w[0]).collect(),
    )
}

/// Returns `(exp(-k * U), U)` with `U` the mean absolute step divided by the
/// peak-to-peak range; a constant series scores 1.
pub fn smoothness_score(s: &TimeSeries, k: f64) -> Result<(f64, f64)> {
    if s.len() < 2 {
        return Err(Error::TooShort {
            what: "time series",
            min: 2,
            actual: s.len(),
        });
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::param("k", "must be > 0"));
    }
    let (lo, hi) = s
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if range == 0.0 {
        return Ok((1.0, 0.0));
    }
    let mean_step = s.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (s.len() - 1) as f64;
    let u = mean_step / range;
    Ok(((-k * u).exp(), u))
}

pub fn light_stability_score(frames: &[GrayFrame], params: &StabilityParams) -> Result<StabilityReport> {
    params.validate()?;
    if frames.len() < 3 {
        return Err(Error::TooShort {
            what: "frame sequence",
            min: 3,
            actual: frames.len(),
        });
    }
    let (intensity, count) = bright_signals(frames, params.tau)?;
    let derivative = derivative_series(&intensity)?;
    let (s_i, u_norm_i) = smoothness_score(&intensity, params.k_i)?;
    let (s_c, u_norm_c) = smoothness_score(&count, params.k_c)?;
    let (s_di, u_norm_di) = smoothness_score(&derivative, params.k_di)?;
    Ok(StabilityReport {
        s_i,
        s_c,
        s_di,
        s_ls: (s_i + s_c + s_di) / 3.0,
        u_norm_i,
        u_norm_c,
        u_norm_di,
        intensity,
        count,
        derivative,
    })
}

/// S_LS of one video at each threshold.
pub fn tau_sensitivity(frames: &[GrayFrame], taus: &[f64], params: &StabilityParams) -> Result<Vec<(f64, f64)>> {
    if taus.is_empty() {
        return Err(Error::TooShort {
            what: "tau list",
            min: 1,
            actual: 0,
        });
    }
    taus.iter()
        .map(|&tau| Ok((tau, light_stability_score(frames, &params.with_tau(tau))?.s_ls)))
        .collect()
}

/// Scores of several videos at one threshold, with their ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauRanking {
    pub tau: f64,
    pub scores: Vec<f64>,
    /// Video indices, best S_LS first; ties keep input order.
    pub ranking: Vec<usize>,
}

pub fn tau_rankings(videos: &[Vec<GrayFrame>], taus: &[f64], params: &StabilityParams) -> Result<Vec<TauRanking>> {
    let per_video: Vec<Vec<(f64, f64)>> = videos
        .iter()
        .map(|v| tau_sensitivity(v, taus, params))
        .collect::<Result<_>>()?;
    Ok(taus
        .iter()
        .enumerate()
        .map(|(j, &tau)| {
            let scores: Vec<f64> = per_video.iter().map(|s| s[j].1).collect();
            let mut ranking: Vec<usize> = (0..scores.len()).collect();
            ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            TauRanking { tau, scores, ranking }
        })
        .collect())
}

/// Threshold sweep used by default for sensitivity studies.
pub const DEFAULT_TAUS: [f64; 5] = [105.0, 115.0, 125.0, 135.0, 145.0];
