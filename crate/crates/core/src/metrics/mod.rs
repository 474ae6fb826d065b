//! Video evaluation: light stability, SSIM, brightness histograms, rank
//! correlation, and report serialization.

mod ssim;
mod stability;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize_u8, GrayFrame};

pub use ssim::{ssim, ssim_gray, ssim_terms, ssim_video, SsimParams, SsimTerms};
pub use stability::{
    bright_signals, derivative_series, light_stability_score, smoothness_score, tau_rankings, tau_sensitivity,
    StabilityParams, StabilityReport, TauRanking, TimeSeries, DEFAULT_TAUS,
};

/// Counts of 8-bit gray values over all frames, `bins` equal-width bins
/// spanning 0..=255.
pub fn brightness_histogram(frames: &[GrayFrame], bins: usize) -> Result<Vec<u64>> {
    if bins == 0 || 256 % bins != 0 {
        return Err(Error::param("bins", format!("must divide 256, got {bins}")));
    }
    let width = 256 / bins;
    let mut counts = vec![0u64; bins];
    for f in frames {
        for &v in f.data() {
            counts[usize::from(quantize_u8(v)) / width] += 1;
        }
    }
    Ok(counts)
}

/// Ranks starting at 1; tied values share their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidData(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::TooShort {
            what: "ranking",
            min: 2,
            actual: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("rank values must be finite".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("a ranking with all values tied has no correlation".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Stability scores of a second video (typically the reference).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    #[serde(rename = "s_I")]
    pub s_i: f64,
    #[serde(rename = "s_C")]
    pub s_c: f64,
    #[serde(rename = "s_dI")]
    pub s_di: f64,
    #[serde(rename = "s_LS")]
    pub s_ls: f64,
}

impl From<&StabilityReport> for StabilitySummary {
    fn from(r: &StabilityReport) -> Self {
        StabilitySummary {
            s_i: r.s_i,
            s_c: r.s_c,
            s_di: r.s_di,
            s_ls: r.s_ls,
        }
    }
}

/// Evaluation summary of a candidate video, optionally against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "s_I")]
    pub s_i: f64,
    #[serde(rename = "s_C")]
    pub s_c: f64,
    #[serde(rename = "s_dI")]
    pub s_di: f64,
    #[serde(rename = "s_LS")]
    pub s_ls: f64,
    /// Mean per-frame SSIM against the reference.
    pub ssim: Option<f64>,
    #[serde(rename = "u_norm_I")]
    pub u_norm_i: f64,
    #[serde(rename = "u_norm_C")]
    pub u_norm_c: f64,
    #[serde(rename = "u_norm_dI")]
    pub u_norm_di: f64,
    pub tau: f64,
    #[serde(rename = "k_I")]
    pub k_i: f64,
    #[serde(rename = "k_C")]
    pub k_c: f64,
    #[serde(rename = "k_dI")]
    pub k_di: f64,
    pub frames: usize,
    pub reference: Option<StabilitySummary>,
    /// Mean-spectrum high-frequency energy of the candidate relative to the reference.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hf_energy_ratio: Option<f64>,
}

impl EvalReport {
    pub fn new(
        candidate: &StabilityReport,
        params: &StabilityParams,
        ssim: Option<f64>,
        reference: Option<&StabilityReport>,
    ) -> Self {
        EvalReport {
            s_i: candidate.s_i,
            s_c: candidate.s_c,
            s_di: candidate.s_di,
            s_ls: candidate.s_ls,
            ssim,
            u_norm_i: candidate.u_norm_i,
            u_norm_c: candidate.u_norm_c,
            u_norm_di: candidate.u_norm_di,
            tau: params.tau,
            k_i: params.k_i,
            k_c: params.k_c,
            k_di: params.k_di,
            frames: candidate.intensity.len(),
            reference: reference.map(StabilitySummary::from),
            hf_energy_ratio: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are plain numbers")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Writes `frame,I_t,C_t,dI_t`, one row per frame; `dI_t` of the last frame
/// is left empty.
pub fn write_signals_csv<W: Write>(report: &StabilityReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "I_t", "C_t", "dI_t"])?;
    for t in 0..report.intensity.len() {
        let d = report.derivative.values.get(t).map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            t.to_string(),
            report.intensity.values[t].to_string(),
            report.count.values[t].to_string(),
            d,
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })
}

pub fn save_signals_csv(report: &StabilityReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_signals_csv(report, std::io::BufWriter::new(file))
}
