//! 2D magnitude spectra and a high-frequency energy comparison.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, GrayFrame, Plane};

/// DC-centered DFT magnitude of a gray frame.
///
/// Bin `(kx, ky)` of the unshifted transform lands at column
/// `(kx + width / 2) % width`, row `(ky + height / 2) % height`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
    pub log_magnitude: Vec<f64>,
}

impl Spectrum {
    pub fn from_magnitude(width: usize, height: usize, magnitude: Vec<f64>) -> Result<Self> {
        if width * height == 0 || magnitude.len() != width * height {
            return Err(Error::InvalidData(format!(
                "spectrum {width}x{height} needs {} bins, got {}",
                width * height,
                magnitude.len()
            )));
        }
        if magnitude.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidData("magnitudes must be finite and >= 0".into()));
        }
        let log_magnitude = magnitude.iter().map(|m| m.ln_1p()).collect();
        Ok(Spectrum {
            width,
            height,
            magnitude,
            log_magnitude,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.magnitude[row * self.width + col]
    }

    /// Position of the DC bin after centering.
    pub fn dc_index(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    /// Distance of a centered bin from DC, as a fraction of the Nyquist frequency.
    pub fn radial_fraction(&self, col: usize, row: usize) -> f64 {
        let fx = (col as f64 - (self.width / 2) as f64) / self.width as f64;
        let fy = (row as f64 - (self.height / 2) as f64) / self.height as f64;
        (fx * fx + fy * fy).sqrt() / 0.5
    }

    /// Elementwise mean of several spectra of equal size.
    pub fn mean(spectra: &[Spectrum]) -> Result<Spectrum> {
        let first = spectra.first().ok_or(Error::TooShort {
            what: "spectrum list",
            min: 1,
            actual: 0,
        })?;
        let mut acc = vec![0.0; first.magnitude.len()];
        for s in spectra {
            ensure_same_dims(first.dims(), s.dims())?;
            for (a, m) in acc.iter_mut().zip(&s.magnitude) {
                *a += m;
            }
        }
        let n = spectra.len() as f64;
        Spectrum::from_magnitude(first.width, first.height, acc.into_iter().map(|a| a / n).collect())
    }

    /// Log-magnitude rescaled to `[0, 1]` for display.
    pub fn log_image(&self) -> Plane {
        let (lo, hi) = self
            .log_magnitude
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let span = hi - lo;
        Plane::from_raw(
            self.width,
            self.height,
            self.log_magnitude
                .iter()
                .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
                .collect(),
        )
    }
}

/// 2D DFT magnitude, DC-centered, with `log_magnitude = ln(1 + magnitude)`.
pub fn magnitude_spectrum(gray: &GrayFrame) -> Spectrum {
    let (w, h) = gray.dims();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);

    let mut buf: Vec<Complex<f64>> = gray.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }

    let mut magnitude = vec![0.0; w * h];
    for ky in 0..h {
        let row = (ky + h / 2) % h;
        for kx in 0..w {
            let col = (kx + w / 2) % w;
            magnitude[row * w + col] = buf[ky * w + kx].norm();
        }
    }
    let log_magnitude = magnitude.iter().map(|m: &f64| m.ln_1p()).collect();
    Spectrum {
        width: w,
        height: h,
        magnitude,
        log_magnitude,
    }
}

/// Sum of magnitudes strictly outside the centered disc of radius
/// `cutoff_fraction * Nyquist`.
pub fn high_freq_energy(spec: &Spectrum, cutoff_fraction: f64) -> f64 {
    let mut total = 0.0;
    for row in 0..spec.height {
        for col in 0..spec.width {
            if spec.radial_fraction(col, row) > cutoff_fraction {
                total += spec.at(col, row);
            }
        }
    }
    total
}

/// High-frequency magnitude of `a` relative to `b`.
pub fn high_freq_energy_ratio(a: &Spectrum, b: &Spectrum, cutoff_fraction: f64) -> Result<f64> {
    if !(cutoff_fraction > 0.0 && cutoff_fraction < 1.0) {
        return Err(Error::param(
            "cutoff_fraction",
            format!("must lie in (0, 1), got {cutoff_fraction}"),
        ));
    }
    ensure_same_dims(a.dims(), b.dims())?;
    let denom = high_freq_energy(b, cutoff_fraction);
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "reference spectrum has no energy above the cutoff".into(),
        ));
    }
    Ok(high_freq_energy(a, cutoff_fraction) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// O(N^2) DFT magnitude, centered the same way.
    fn naive_spectrum(p: &Plane) -> Vec<f64> {
        let (w, h) = p.dims();
        let mut out = vec![0.0; w * h];
        for ky in 0..h {
            for kx in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0 * PI * ((kx * x) as f64 / w as f64 + (ky * y) as f64 / h as f64);
                        re += p.get(x, y) * ang.cos();
                        im += p.get(x, y) * ang.sin();
                    }
                }
                out[((ky + h / 2) % h) * w + (kx + w / 2) % w] = (re * re + im * im).sqrt();
            }
        }
        out
    }

    fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    #[test]
    fn constant_frame_is_dc_only() {
        let s = magnitude_spectrum(&Plane::filled(8, 6, 0.25));
        let (dc_x, dc_y) = s.dc_index();
        assert!((s.at(dc_x, dc_y) - 0.25 * 48.0).abs() < 1e-9);
        for row in 0..6 {
            for col in 0..8 {
                if (col, row) != (dc_x, dc_y) {
                    assert!(s.at(col, row) <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn cosine_has_two_symmetric_peaks() {
        let (w, h, k) = (16, 8, 3usize);
        let p = Plane::from_fn(w, h, |x, _| 0.5 + 0.25 * (2.0 * PI * (k * x) as f64 / w as f64).cos());
        let s = magnitude_spectrum(&p);
        let (cx, cy) = s.dc_index();
        let peak = 0.25 * (w * h) as f64 / 2.0;
        assert!((s.at(cx + k, cy) - peak).abs() < 1e-9);
        assert!((s.at(cx - k, cy) - peak).abs() < 1e-9);
        for row in 0..h {
            for col in 0..w {
                if row != cy || ![cx, cx + k, cx - k].contains(&col) {
                    assert!(s.at(col, row) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn matches_naive_dft() {
        let p = random_plane(8, 8, 11);
        let s = magnitude_spectrum(&p);
        let oracle = naive_spectrum(&p);
        for (a, b) in s.magnitude.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-6 * b.max(1.0));
        }
        // odd sizes exercise the centering convention
        let p = random_plane(5, 7, 12);
        let s = magnitude_spectrum(&p);
        for (a, b) in s.magnitude.iter().zip(&naive_spectrum(&p)) {
            assert!((a - b).abs() <= 1e-6 * b.max(1.0));
        }
        let sum: f64 = p.data().iter().sum();
        let (cx, cy) = s.dc_index();
        assert!((s.at(cx, cy) - sum.abs()).abs() < 1e-9);
    }

    #[test]
    fn parseval() {
        for seed in 0..5 {
            let p = random_plane(16, 16, seed);
            let s = magnitude_spectrum(&p);
            let lhs: f64 = s.magnitude.iter().map(|m| m * m).sum();
            let rhs = 256.0 * p.data().iter().map(|v| v * v).sum::<f64>();
            assert!((lhs - rhs).abs() <= 1e-4 * rhs);
        }
    }

    #[test]
    fn energy_ratio_cases() {
        let p = random_plane(16, 16, 4);
        let a = magnitude_spectrum(&p);
        assert!((high_freq_energy_ratio(&a, &a, 0.25).unwrap() - 1.0).abs() < 1e-12);

        let mut low = a.magnitude.clone();
        let mut halved = a.magnitude.clone();
        for row in 0..16 {
            for col in 0..16 {
                if a.radial_fraction(col, row) > 0.25 {
                    low[row * 16 + col] = 0.0;
                    halved[row * 16 + col] *= 0.5;
                }
            }
        }
        let low = Spectrum::from_magnitude(16, 16, low).unwrap();
        let halved = Spectrum::from_magnitude(16, 16, halved).unwrap();
        assert!(matches!(
            high_freq_energy_ratio(&a, &low, 0.25),
            Err(Error::Degenerate(_))
        ));
        assert!((high_freq_energy_ratio(&a, &halved, 0.25).unwrap() - 2.0).abs() < 1e-6);

        let other = magnitude_spectrum(&random_plane(8, 16, 5));
        assert!(high_freq_energy_ratio(&a, &other, 0.25).is_err());
        assert!(high_freq_energy_ratio(&a, &a, 1.0).is_err());
    }
}
