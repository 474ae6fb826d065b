//! Dense optical flow by polynomial expansion (Farneback), coarse to fine,
//! plus backward warping.
//!
//! Each frame is locally approximated by a quadratic `x^T A x + b^T x + c`
//! fitted with Gaussian applicability. For two frames with expansions
//! `(A1, b1)` and `(A2, b2)` and a prior displacement `d0`, the displacement
//! satisfies `A d = (b1 - b2) / 2 + A d0` with `A = (A1 + A2) / 2`; this is
//! solved in the least-squares sense over a box window and iterated.
//!
//! [`estimate_flow`] returns the field in the coordinates of the *current*
//! frame, so that `curr(x) ~ prev(x - flow(x))` and [`warp_frame`] of the
//! previous frame lines it up with the current one.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{box_blur, gaussian_blur, GaussianKernel};
use crate::image::{ensure_same_dims, Frame, GrayFrame, Plane};

/// Working intensity scale inside the solver (8-bit units).
const INTENSITY_SCALE: f64 = 255.0;
/// Diagonal damping of the 2x2 normal equations, in scaled units.
const DAMPING: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    /// Side of the box window over which the displacement is solved (odd).
    pub window_size: usize,
    pub iterations: usize,
    /// Side of the polynomial-fit neighborhood (odd, >= 5).
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            window_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::param("flow.pyramid_levels", "must be >= 1"));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(Error::param("flow.pyramid_scale", "must lie in (0, 1)"));
        }
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::param("flow.window_size", "must be an odd integer >= 3"));
        }
        if self.iterations < 1 {
            return Err(Error::param("flow.iterations", "must be >= 1"));
        }
        if self.poly_n < 5 || self.poly_n % 2 == 0 {
            return Err(Error::param("flow.poly_n", "must be an odd integer >= 5"));
        }
        if !(self.poly_sigma.is_finite() && self.poly_sigma > 0.0) {
            return Err(Error::param("flow.poly_sigma", "must be > 0"));
        }
        Ok(())
    }
}

/// Per-pixel displacement in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if n == 0 || u.len() != n || v.len() != n {
            return Err(Error::InvalidData(format!(
                "flow {width}x{height} needs {n} samples per component"
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::InvalidData("flow contains non-finite values".into()));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Writes the debug dump: `"HLFL"`, width and height as little-endian
    /// `u32`, then the `u` plane and the `v` plane as row-major little-endian `f32`.
    pub fn write_hlfl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(b"HLFL")?;
        out.write_all(&(self.width as u32).to_le_bytes())?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        for plane in [&self.u, &self.v] {
            for &x in plane.iter() {
                out.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_hlfl<R: Read>(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        input
            .read_to_end(&mut buf)
            .map_err(|e| Error::io("<flow dump>", e))?;
        if buf.len() < 12 || &buf[..4] != b"HLFL" {
            return Err(Error::InvalidData("missing HLFL header".into()));
        }
        let width = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let n = width * height;
        if buf.len() != 12 + 8 * n {
            return Err(Error::InvalidData(format!(
                "HLFL payload for {width}x{height} should be {} bytes, got {}",
                8 * n,
                buf.len() - 12
            )));
        }
        let floats: Vec<f64> = buf[12..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let (u, v) = floats.split_at(n);
        FlowField::new(width, height, u.to_vec(), v.to_vec())
    }
}

/// Per-pixel `sqrt(u^2 + v^2)`.
pub fn flow_magnitude(flow: &FlowField) -> Plane {
    Plane::from_raw(
        flow.width,
        flow.height,
        flow.u
            .iter()
            .zip(&flow.v)
            .map(|(u, v)| (u * u + v * v).sqrt())
            .collect(),
    )
}

/// Backward warp: `out(x, y) = frame(x - u, y - v)`, bilinear, edge-replicated.
pub fn warp_frame(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    ensure_same_dims(frame.dims(), flow.dims())?;
    let (w, h) = frame.dims();
    let src = frame.data();
    let mut out = vec![0.0; w * h * 3];
    out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let (u, v) = flow.at(x, y);
            let sx = (x as f64 - u).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 - v).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            for c in 0..3 {
                let s = |xx: usize, yy: usize| src[(yy * w + xx) * 3 + c];
                let top = s(x0, y0) * (1.0 - fx) + s(x1, y0) * fx;
                let bot = s(x0, y1) * (1.0 - fx) + s(x1, y1) * fx;
                row[x * 3 + c] = top * (1.0 - fy) + bot * fy;
            }
        }
    });
    Ok(Frame::from_raw(w, h, out))
}

/// Dense flow from `prev` to `curr`, expressed at `curr` pixel positions.
pub fn estimate_flow(prev: &GrayFrame, curr: &GrayFrame, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    ensure_same_dims(prev.dims(), curr.dims())?;
    let (w, h) = curr.dims();
    if w < params.window_size || h < params.window_size {
        return Err(Error::param(
            "flow.window_size",
            format!(
                "frame {w}x{h} is smaller than the {0}x{0} analysis window",
                params.window_size
            ),
        ));
    }
    // Displacement d on `curr` with curr(x) ~ prev(x + d); flow is its negation.
    let (du, dv) = displacement(curr, prev, params);
    FlowField::new(
        w,
        h,
        du.into_iter().map(|d| -d).collect(),
        dv.into_iter().map(|d| -d).collect(),
    )
}

/// Flow between each consecutive pair; entry `t - 1` maps frame `t - 1` onto frame `t`.
pub fn estimate_sequence_flows(grays: &[GrayFrame], params: &FlowParams) -> Result<Vec<FlowField>> {
    grays
        .windows(2)
        .map(|pair| estimate_flow(&pair[0], &pair[1], params))
        .collect()
}

/// Quadratic-fit coefficients at one pixel: `[b_x, b_y, a_xx, a_yy, a_xy]`
/// where `a_xy` multiplies `x * y`.
type Coeffs = [f64; 5];

struct PolyBasis {
    /// Dual weights per tap offset.
    taps: Vec<(isize, isize, Coeffs)>,
}

impl PolyBasis {
    fn new(poly_n: usize, sigma: f64) -> Self {
        let n = (poly_n / 2) as isize;
        let basis = |x: f64, y: f64| [1.0, x, y, x * x, y * y, x * y];
        let mut gram = [[0.0; 6]; 6];
        let mut offsets = Vec::new();
        for dy in -n..=n {
            for dx in -n..=n {
                let (x, y) = (dx as f64, dy as f64);
                let g = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
                let b = basis(x, y);
                for i in 0..6 {
                    for j in 0..6 {
                        gram[i][j] += g * b[i] * b[j];
                    }
                }
                offsets.push((dx, dy, g, b));
            }
        }
        let inv = invert6(gram);
        let taps = offsets
            .into_iter()
            .map(|(dx, dy, g, b)| {
                let mut w = [0.0; 5];
                for (k, wk) in w.iter_mut().enumerate() {
                    *wk = g * (0..6).map(|j| inv[k + 1][j] * b[j]).sum::<f64>();
                }
                (dx, dy, w)
            })
            .collect();
        PolyBasis { taps }
    }

    fn expand(&self, img: &Plane) -> Vec<Coeffs> {
        let (w, h) = img.dims();
        let mut out = vec![[0.0; 5]; w * h];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, c) in row.iter_mut().enumerate() {
                let mut acc = [0.0; 5];
                for &(dx, dy, ref wt) in &self.taps {
                    let v = img.get_clamped(x as isize + dx, y as isize + dy);
                    for k in 0..5 {
                        acc[k] += wt[k] * v;
                    }
                }
                *c = acc;
            }
        });
        out
    }
}

fn sample_coeffs(field: &[Coeffs], w: usize, h: usize, x: f64, y: f64) -> Coeffs {
    let sx = x.clamp(0.0, (w - 1) as f64);
    let sy = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (c00, c10, c01, c11) = (
        &field[y0 * w + x0],
        &field[y0 * w + x1],
        &field[y1 * w + x0],
        &field[y1 * w + x1],
    );
    let mut out = [0.0; 5];
    for k in 0..5 {
        let top = c00[k] * (1.0 - fx) + c10[k] * fx;
        let bot = c01[k] * (1.0 - fx) + c11[k] * fx;
        out[k] = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// One Gauss-Newton style update: accumulate the normal equations of
/// `A d = db` per pixel, average them over the window and solve.
fn refine(
    ra: &[Coeffs],
    rb: &[Coeffs],
    w: usize,
    h: usize,
    du: &mut [f64],
    dv: &mut [f64],
    window_radius: usize,
) {
    let n = w * h;
    let mut terms: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let rows: Vec<[Vec<f64>; 5]> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut r: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; w]);
            for x in 0..w {
                let i = y * w + x;
                let (dx, dy) = (du[i], dv[i]);
                let a = &ra[i];
                let b = sample_coeffs(rb, w, h, x as f64 + dx, y as f64 + dy);
                let axx = 0.5 * (a[2] + b[2]);
                let ayy = 0.5 * (a[3] + b[3]);
                let axy = 0.25 * (a[4] + b[4]);
                let hx = 0.5 * (a[0] - b[0]) + axx * dx + axy * dy;
                let hy = 0.5 * (a[1] - b[1]) + axy * dx + ayy * dy;
                r[0][x] = axx * axx + axy * axy;
                r[1][x] = axy * (axx + ayy);
                r[2][x] = axy * axy + ayy * ayy;
                r[3][x] = axx * hx + axy * hy;
                r[4][x] = axy * hx + ayy * hy;
            }
            r
        })
        .collect();
    for (y, r) in rows.into_iter().enumerate() {
        for k in 0..5 {
            terms[k][y * w..(y + 1) * w].copy_from_slice(&r[k]);
        }
    }
    let [g11, g12, g22, h1, h2] = terms.map(|t| box_blur(&Plane::from_raw(w, h, t), window_radius));
    let (g11, g12, g22, h1, h2) = (g11.data(), g12.data(), g22.data(), h1.data(), h2.data());
    for i in 0..n {
        let a = g11[i] + DAMPING;
        let c = g22[i] + DAMPING;
        let b = g12[i];
        let det = a * c - b * b;
        du[i] = (c * h1[i] - b * h2[i]) / det;
        dv[i] = (a * h2[i] - b * h1[i]) / det;
    }
}

/// Displacement `d` on `a` such that `a(x) ~ b(x + d(x))`.
fn displacement(a: &Plane, b: &Plane, p: &FlowParams) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = a.dims();
    let a = a.map(|v| v * INTENSITY_SCALE);
    let b = b.map(|v| v * INTENSITY_SCALE);
    let basis = PolyBasis::new(p.poly_n, p.poly_sigma);
    let min_dim = p.poly_n.max(8);

    let mut sizes = vec![(w, h)];
    for k in 1..p.pyramid_levels {
        let s = p.pyramid_scale.powi(k as i32);
        let lw = (w as f64 * s).round() as usize;
        let lh = (h as f64 * s).round() as usize;
        if lw < min_dim || lh < min_dim {
            break;
        }
        sizes.push((lw, lh));
    }

    let mut flow: Option<(usize, usize, Vec<f64>, Vec<f64>)> = None;
    for (k, &(lw, lh)) in sizes.iter().enumerate().rev() {
        let (la, lb) = if k == 0 {
            (a.clone(), b.clone())
        } else {
            let sigma = (1.0 / p.pyramid_scale.powi(k as i32) - 1.0) * 0.5;
            let kernel = GaussianKernel::new(sigma).expect("positive sigma");
            (
                gaussian_blur(&a, &kernel).resize_bilinear(lw, lh).expect("nonzero level"),
                gaussian_blur(&b, &kernel).resize_bilinear(lw, lh).expect("nonzero level"),
            )
        };
        let (mut du, mut dv) = match flow.take() {
            None => (vec![0.0; lw * lh], vec![0.0; lw * lh]),
            Some((pw, ph, pu, pv)) => {
                let sx = lw as f64 / pw as f64;
                let sy = lh as f64 / ph as f64;
                let up = |d: Vec<f64>, s: f64| {
                    Plane::from_raw(pw, ph, d)
                        .resize_bilinear(lw, lh)
                        .expect("nonzero level")
                        .into_data()
                        .into_iter()
                        .map(|x| x * s)
                        .collect::<Vec<_>>()
                };
                (up(pu, sx), up(pv, sy))
            }
        };
        let ra = basis.expand(&la);
        let rb = basis.expand(&lb);
        for _ in 0..p.iterations {
            refine(&ra, &rb, lw, lh, &mut du, &mut dv, p.window_size / 2);
        }
        flow = Some((lw, lh, du, dv));
    }
    let (_, _, du, dv) = flow.expect("at least one level");
    (du, dv)
}

/// Gauss-Jordan inverse of the (symmetric positive definite) 6x6 Gram matrix.
fn invert6(mut m: [[f64; 6]; 6]) -> [[f64; 6]; 6] {
    let mut inv = [[0.0; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let pivot = (col..6)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let d = m[col][col];
        for k in 0..6 {
            m[col][k] /= d;
            inv[col][k] /= d;
        }
        for r in 0..6 {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for k in 0..6 {
                        m[r][k] -= f * m[col][k];
                        inv[r][k] -= f * inv[col][k];
                    }
                }
            }
        }
    }
    inv
}
