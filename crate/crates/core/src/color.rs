//! sRGB (D65) <-> CIELAB conversion.

use std::sync::LazyLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Frame, Plane};

/// Linear sRGB -> XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

/// Reference white, taken as the image of linear (1, 1, 1) so that white maps
/// to a = b = 0 exactly.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    let m = &RGB_TO_XYZ;
    [
        m[0][0] + m[0][1] + m[0][2],
        m[1][0] + m[1][1] + m[1][2],
        m[2][0] + m[2][1] + m[2][2],
    ]
});

const EPSILON: f64 = 216.0 / 24389.0; // (6/29)^3
const KAPPA: f64 = 24389.0 / 27.0;

/// Planar CIELAB frame. `l` in `[0, 100]` for in-gamut input; `a`/`b` unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct LabFrame {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabFrame {
    pub fn new(width: usize, height: usize, l: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if n == 0 || l.len() != n || a.len() != n || b.len() != n {
            return Err(Error::InvalidData(format!(
                "lab channels must each hold {n} samples (got {}, {}, {})",
                l.len(),
                a.len(),
                b.len()
            )));
        }
        Ok(LabFrame {
            width,
            height,
            l,
            a,
            b,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn l_plane(&self) -> Plane {
        Plane::from_raw(self.width, self.height, self.l.clone())
    }
}

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(f: f64) -> f64 {
    let t = f * f * f;
    if t > EPSILON {
        t
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

/// Converts one sRGB triple in `[0, 1]` to `[L, a, b]`.
#[inline]
pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let m = &RGB_TO_XYZ;
    let w = &*WHITE;
    let xyz = [0, 1, 2].map(|r| (m[r][0] * lin[0] + m[r][1] * lin[1] + m[r][2] * lin[2]) / w[r]);
    let [fx, fy, fz] = xyz.map(lab_f);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts `[L, a, b]` back to sRGB, clamping each channel to `[0, 1]`.
#[inline]
pub fn lab_to_rgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = &*WHITE;
    let xyz = [lab_f_inv(fx) * w[0], lab_f_inv(fy) * w[1], lab_f_inv(fz) * w[2]];
    let m = &*XYZ_TO_RGB;
    [0, 1, 2].map(|r| {
        let lin = m[r][0] * xyz[0] + m[r][1] * xyz[1] + m[r][2] * xyz[2];
        linear_to_srgb(lin.max(0.0)).clamp(0.0, 1.0)
    })
}

pub fn rgb_to_lab(frame: &Frame) -> LabFrame {
    let lab: Vec<[f64; 3]> = frame
        .data()
        .par_chunks_exact(3)
        .map(|p| rgb_to_lab_pixel([p[0], p[1], p[2]]))
        .collect();
    let (w, h) = frame.dims();
    LabFrame {
        width: w,
        height: h,
        l: lab.iter().map(|p| p[0]).collect(),
        a: lab.iter().map(|p| p[1]).collect(),
        b: lab.iter().map(|p| p[2]).collect(),
    }
}

pub fn lab_to_rgb(lab: &LabFrame) -> Frame {
    let n = lab.width * lab.height;
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| lab_to_rgb_pixel([lab.l[i], lab.a[i], lab.b[i]]))
        .collect();
    Frame::from_raw(lab.width, lab.height, data)
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 1, 2, 2), -c(1, 0, 2, 2), c(1, 0, 2, 1)],
        [-c(0, 1, 2, 2), c(0, 0, 2, 2), -c(0, 0, 2, 1)],
        [c(0, 1, 1, 2), -c(0, 0, 1, 2), c(0, 0, 1, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for k in 0..3 {
            inv[r][k] = cof[k][r] / det;
        }
    }
    inv
}
