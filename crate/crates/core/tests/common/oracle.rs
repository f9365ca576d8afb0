//! Independent reference computations shared by the test targets.

use std::f64::consts::PI;

use num_complex::Complex64;
use pulsemag::frame_io::Plane;

use super::{natural, NATURAL};

/// Third derivative of the unit-area Gaussian by a five-point central difference.
pub fn fd_gaussian_jerk(sigma: f64, k: f64) -> f64 {
    let g = |x: f64| (-0.5 * x * x / (sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
    let h = 1e-3 * sigma;
    (g(k + 2.0 * h) - 2.0 * g(k + h) + 2.0 * g(k - h) - g(k - 2.0 * h)) / (2.0 * h * h * h)
}

pub fn dtft(taps: &[f64], fps: f64, f: f64) -> Complex64 {
    let r = (taps.len() / 2) as f64;
    let w = 2.0 * PI * f / fps;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &t) in taps.iter().enumerate() {
        let n = i as f64 - r;
        re += t * (w * n).cos();
        im -= t * (w * n).sin();
    }
    Complex64::new(re, im)
}

/// Least-squares amplitude of a sinusoid at normalized frequency `w`.
pub fn fitted_amplitude(samples: &[(usize, f64)], w: f64) -> f64 {
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, y) in samples {
        let (s, c) = (w * t as f64).sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        ys += y * s;
        yc += y * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    a.hypot(b)
}

/// Values from scikit-image 0.25 `structural_similarity(a, b, data_range=1,
/// gaussian_weights=True, sigma=1.5, use_sample_covariance=False)` on the
/// pairs built by `reference_pair`.
pub const SSIM_REFERENCE: [f64; 20] = [
    0.8592074644106635,
    0.8175985603797815,
    0.9374387337822284,
    0.9776488905875415,
    0.9772737560044812,
    0.7278725084641466,
    0.7063607301988997,
    0.696342813544556,
    0.4790512911052986,
    0.6374543644332237,
    0.8126700381395219,
    0.7781627395180064,
    0.9117046926930442,
    0.9887471572310891,
    0.971818818954144,
    0.760596695663906,
    0.8309112971165384,
    0.718418240457031,
    0.9321470504299811,
    0.8669610162041909,
];

pub fn reference_pair(i: usize) -> (Plane, Plane) {
    let a = natural(NATURAL[i % 5]);
    let (w, h) = (a.width(), a.height());
    let b = match i / 5 {
        0 => Plane::from_fn(w, h, |x, y| (a.get(x, y) + 0.1).clamp(0.0, 1.0)),
        1 => Plane::from_fn(w, h, |x, y| {
            (a.get(x, y) + 0.05 * (x as f32 * 1.7 + y as f32 * 0.3).sin()).clamp(0.0, 1.0)
        }),
        2 => Plane::from_fn(w, h, |x, y| a.get(x, y) * 0.7 + 0.15),
        _ => Plane::from_fn(w, h, |x, y| a.get((x + 1).min(w - 1), y)),
    };
    (a, b)
}
