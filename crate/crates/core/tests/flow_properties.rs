use relight_core::flow::{estimate_flow, flow_magnitude, warp_frame, FlowField, FlowParams};
use relight_core::image::{to_grayscale, Frame, Plane};
use relight_core::synth::{smooth_texture, textured_translation};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn interior(flow: &FlowField, border: usize) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = flow.dims();
    let mut us = Vec::new();
    let mut vs = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let (u, v) = flow.at(x, y);
            us.push(u);
            vs.push(v);
        }
    }
    (us, vs)
}

fn interior_mad(a: &Frame, b: &Frame, border: usize) -> f64 {
    let (w, h) = a.dims();
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in border..h - border {
        for x in border..w - border {
            let (pa, pb) = (a.pixel(x, y), b.pixel(x, y));
            for c in 0..3 {
                acc += (pa[c] - pb[c]).abs();
                n += 1;
            }
        }
    }
    acc / n as f64
}

#[test]
fn identical_frames_have_no_motion() {
    let tex = smooth_texture(96, 80, 2.0, 5);
    let flow = estimate_flow(&tex, &tex, &FlowParams::default()).unwrap();
    let mag = flow_magnitude(&flow);
    let still = mag.data().iter().filter(|&&m| m <= 0.05).count();
    assert!(still as f64 >= 0.99 * mag.len() as f64);
}

#[test]
fn textureless_frames_stay_finite() {
    let a = Plane::filled(64, 48, 0.3);
    let flow = estimate_flow(&a, &a, &FlowParams::default()).unwrap();
    assert!(flow_magnitude(&flow).data().iter().all(|m| m.is_finite() && *m <= 0.1));
}

#[test]
fn recovers_synthetic_translation() {
    let frames = textured_translation(128, 128, 2, 2, 3, 2.0, 17);
    let (prev, curr) = (to_grayscale(&frames[0]), to_grayscale(&frames[1]));
    let flow = estimate_flow(&prev, &curr, &FlowParams::default()).unwrap();
    let (us, vs) = interior(&flow, 16);
    let (mu, mv) = (median(us), median(vs));
    assert!((mu - 2.0).abs() <= 0.5, "median u = {mu}");
    assert!((mv - 3.0).abs() <= 0.5, "median v = {mv}");

    let warped = warp_frame(&frames[0], &flow).unwrap();
    let before = interior_mad(&frames[0], &frames[1], 16);
    let after = interior_mad(&warped, &frames[1], 16);
    assert!(after <= 0.7 * before, "MAD {before} -> {after}");
}

#[test]
fn warping_helps_for_small_translations() {
    for (i, &(dx, dy)) in [(1, 0), (0, -2), (-3, 1), (4, 3), (5, 0)].iter().enumerate() {
        let frames = textured_translation(96, 96, 2, dx, dy, 2.0, 100 + i as u64);
        let (prev, curr) = (to_grayscale(&frames[0]), to_grayscale(&frames[1]));
        let flow = estimate_flow(&prev, &curr, &FlowParams::default()).unwrap();
        let warped = warp_frame(&frames[0], &flow).unwrap();
        let before = interior_mad(&frames[0], &frames[1], 12);
        let after = interior_mad(&warped, &frames[1], 12);
        assert!(after <= 0.7 * before, "({dx},{dy}): MAD {before} -> {after}");
    }
}

#[test]
fn flow_is_shift_equivariant_on_interiors() {
    // Same motion seen through two windows offset by (6, 4).
    let frames = textured_translation(120, 110, 2, 2, 1, 2.0, 23);
    let (g0, g1) = (to_grayscale(&frames[0]), to_grayscale(&frames[1]));
    let crop = |p: &Plane, ox: usize, oy: usize| Plane::from_fn(96, 96, |x, y| p.get(x + ox, y + oy));
    let params = FlowParams::default();
    let fa = estimate_flow(&crop(&g0, 0, 0), &crop(&g1, 0, 0), &params).unwrap();
    let fb = estimate_flow(&crop(&g0, 6, 4), &crop(&g1, 6, 4), &params).unwrap();
    let mut du = Vec::new();
    let mut dv = Vec::new();
    for y in 16..80 {
        for x in 16..80 {
            let (ua, va) = fa.at(x + 6, y + 4);
            let (ub, vb) = fb.at(x, y);
            du.push((ua - ub).abs());
            dv.push((va - vb).abs());
        }
    }
    assert!(median(du) <= 0.2);
    assert!(median(dv) <= 0.2);
}
