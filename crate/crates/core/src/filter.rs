//! Separable linear filters with edge-replicate boundaries.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Plane;

/// Normalized, symmetric 1D Gaussian taps; the 2D kernel is their outer product.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    /// Kernel with radius `ceil(3 sigma)` (at least 1).
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param("sigma", format!("must be > 0, got {sigma}")));
        }
        Self::with_radius(sigma, min_radius(sigma))
    }

    /// Kernel with an explicit radius, which must cover `ceil(3 sigma)`.
    pub fn with_radius(sigma: f64, radius: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param("sigma", format!("must be > 0, got {sigma}")));
        }
        if radius < min_radius(sigma) {
            return Err(Error::param(
                "radius",
                format!(
                    "radius {radius} is below ceil(3 sigma) = {} for sigma {sigma}",
                    min_radius(sigma)
                ),
            ));
        }
        let r = radius as isize;
        let denom = 2.0 * sigma * sigma;
        let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / denom).exp()).collect();
        let sum: f64 = raw.iter().sum();
        Ok(GaussianKernel {
            sigma,
            radius,
            weights: raw.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// 1D taps, length `2 * radius + 1`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// 2D tap at offset `(dx, dy)` from the center.
    pub fn weight_2d(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        if dx.abs() > r || dy.abs() > r {
            return 0.0;
        }
        self.weights[(dx + r) as usize] * self.weights[(dy + r) as usize]
    }
}

pub(crate) fn min_radius(sigma: f64) -> usize {
    ((3.0 * sigma).ceil() as usize).max(1)
}

/// Separable Gaussian convolution with edge replication.
pub fn gaussian_blur(plane: &Plane, kernel: &GaussianKernel) -> Plane {
    separable(plane, kernel.weights())
}

/// Mean over a `(2 radius + 1)^2` box with edge replication.
pub fn box_blur(plane: &Plane, radius: usize) -> Plane {
    if radius == 0 {
        return plane.clone();
    }
    let n = 2 * radius + 1;
    separable(plane, &vec![1.0 / n as f64; n])
}

/// Convolves rows then columns with the same symmetric 1D taps.
pub(crate) fn separable(plane: &Plane, taps: &[f64]) -> Plane {
    let (w, h) = plane.dims();
    let r = (taps.len() / 2) as isize;
    let src = plane.data();

    let mut horiz = vec![0.0; w * h];
    horiz.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let line = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let xi = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += t * line[xi];
            }
            *out = acc;
        }
    });

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        row.fill(0.0);
        for (k, &t) in taps.iter().enumerate() {
            let yi = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            let line = &horiz[yi * w..(yi + 1) * w];
            for (o, &v) in row.iter_mut().zip(line) {
                *o += t * v;
            }
        }
    });
    Plane::from_raw(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    /// Direct 2D double loop with clamped indices.
    fn naive_blur(p: &Plane, k: &GaussianKernel) -> Plane {
        let r = k.radius() as isize;
        Plane::from_fn(p.width(), p.height(), |x, y| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    acc += k.weight_2d(dx, dy) * p.get_clamped(x as isize + dx, y as isize + dy);
                }
            }
            acc
        })
    }

    #[test]
    fn kernel_shape() {
        let k = GaussianKernel::new(1.0).unwrap();
        assert_eq!(k.radius(), 3);
        let w = k.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..w.len() {
            assert_eq!(w[i], w[w.len() - 1 - i]);
        }
        assert!(GaussianKernel::new(0.0).is_err());
        assert!(GaussianKernel::with_radius(2.0, 5).is_err());
        assert!(GaussianKernel::with_radius(1.5, 5).is_ok());
    }

    #[test]
    fn constant_plane_unchanged() {
        let p = Plane::filled(9, 5, 0.37);
        let out = gaussian_blur(&p, &GaussianKernel::new(2.0).unwrap());
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn impulse_response() {
        let k = GaussianKernel::new(1.0).unwrap();
        let mut p = Plane::filled(15, 15, 0.0);
        p.set(7, 7, 1.0);
        let out = gaussian_blur(&p, &k);
        assert!((out.get(7, 7) - k.weight_2d(0, 0)).abs() < 1e-12);
        assert!((out.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_naive_convolution() {
        let p = random_plane(16, 16, 7);
        let k = GaussianKernel::new(2.0).unwrap();
        let fast = gaussian_blur(&p, &k);
        let slow = naive_blur(&p, &k);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn box_blur_mean() {
        let p = random_plane(12, 10, 3);
        let out = box_blur(&p, 2);
        let mut acc = 0.0;
        for dy in -2..=2isize {
            for dx in -2..=2isize {
                acc += p.get_clamped(5 + dx, 5 + dy);
            }
        }
        assert!((out.get(5, 5) - acc / 25.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn taps_sum_to_one(sigma in 0.5f64..20.0) {
                let k = GaussianKernel::new(sigma).unwrap();
                prop_assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(k.radius() >= (3.0 * sigma).ceil() as usize);
            }

            #[test]
            fn blur_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let x = random_plane(11, 7, seed);
                let y = random_plane(11, 7, seed + 10_000);
                let k = GaussianKernel::new(1.3).unwrap();
                let combo = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
                let lhs = gaussian_blur(&combo, &k);
                let bx = gaussian_blur(&x, &k);
                let by = gaussian_blur(&y, &k);
                for i in 0..lhs.len() {
                    let rhs = a * bx.data()[i] + b * by.data()[i];
                    prop_assert!((lhs.data()[i] - rhs).abs() < 1e-6);
                }
            }
        }
    }
}
