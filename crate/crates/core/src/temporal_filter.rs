//! Third-order Gaussian-derivative ("jerk") filtering of local phase.
//!
//! The kernel is applied as a fixed-latency causal convolution: once
//! `2 * radius + 1` samples are buffered, the response belongs to the sample
//! `radius` frames in the past.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default truncation half-width in units of sigma.
pub const DEFAULT_RADIUS_MULT: f64 = 4.0;

/// Coefficients with amplitude below this contribute no phase increment.
pub const AMPLITUDE_FLOOR: f64 = 1e-6;

/// Wrap an angle into `(-pi, pi]`.
#[inline]
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    // y in [-pi, pi); move the closed end to +pi
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// `arg(z)` in `(-pi, pi]` (`atan2` returns `-pi` for negative zero imaginary).
#[inline]
pub fn arg_half_open(z: Complex64) -> f64 {
    let a = z.im.atan2(z.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Discrete third derivative of a unit-area Gaussian, moment-corrected and
/// normalized to unit gain at the tuning frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct JerkKernel {
    pub fps: f64,
    pub omega: f64,
    pub sigma: f64,
    pub radius: usize,
    /// `taps[radius + k]` is the weight for offset `k in -radius..=radius`.
    pub taps: Vec<f64>,
}

/// Analytic `d^3/dt^3` of the unit-area Gaussian sampled at integer offsets.
pub fn raw_jerk_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let s2 = sigma * sigma;
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    (-(radius as isize)..=radius as isize)
        .map(|k| {
            let k = k as f64;
            let g = norm * (-0.5 * k * k / s2).exp();
            (3.0 * k / (s2 * s2) - k * k * k / (s2 * s2 * s2)) * g
        })
        .collect()
}

/// Remove the components of `taps` along `1, k, k^2` (discrete inner product
/// over the symmetric support).
pub fn remove_low_moments(taps: &mut [f64]) {
    let radius = (taps.len() / 2) as f64;
    let ks: Vec<f64> = (0..taps.len()).map(|i| i as f64 - radius).collect();
    // Gram-Schmidt on {1, k, k^2}; 1 and k^2 are not orthogonal.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for p in 0..3 {
        let mut v: Vec<f64> = ks.iter().map(|k| k.powi(p)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    for b in &basis {
        let dot: f64 = taps.iter().zip(b).map(|(x, y)| x * y).sum();
        taps.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
}

/// DTFT `sum_k taps[k] e^{-i 2 pi f k / fps}` at frequency `f` Hz.
pub fn frequency_response(taps: &[f64], fps: f64, f: f64) -> Complex64 {
    let radius = (taps.len() / 2) as isize;
    let w = 2.0 * PI * f / fps;
    taps.iter()
        .enumerate()
        .map(|(i, &t)| Complex64::from_polar(t, -w * (i as isize - radius) as f64))
        .sum()
}

impl JerkKernel {
    pub fn new(fps: f64, omega: f64, radius_mult: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        if !(radius_mult.is_finite() && radius_mult > 0.0) {
            return Err(Error::Config(format!(
                "radius multiplier must be positive, got {radius_mult}"
            )));
        }
        if !(omega.is_finite() && omega > 0.0 && omega < fps / 2.0) {
            return Err(Error::CardiacFrequencyUnresolvable { fps, omega });
        }
        let sigma = fps / (4.0 * omega);
        let radius = (radius_mult * sigma).ceil() as usize;
        let mut taps = raw_jerk_taps(sigma, radius);
        remove_low_moments(&mut taps);
        // Restore exact odd symmetry after the floating-point projections.
        for k in 1..=radius {
            let odd = 0.5 * (taps[radius + k] - taps[radius - k]);
            taps[radius + k] = odd;
            taps[radius - k] = -odd;
        }
        taps[radius] = 0.0;
        let gain = frequency_response(&taps, fps, omega).norm();
        if gain <= 0.0 || !gain.is_finite() {
            return Err(Error::Config(format!(
                "kernel has no gain at {omega} Hz (radius {radius})"
            )));
        }
        taps.iter_mut().for_each(|t| *t /= gain);
        Ok(Self {
            fps,
            omega,
            sigma,
            radius,
            taps,
        })
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Output delay in frames.
    pub fn latency(&self) -> usize {
        self.radius
    }

    pub fn response_at(&self, f: f64) -> Complex64 {
        frequency_response(&self.taps, self.fps, f)
    }

    /// Weights applied to a window of samples ordered oldest to newest, i.e.
    /// the time-reversed taps (convolution, not correlation).
    pub fn window_weights(&self) -> Vec<f64> {
        self.taps.iter().rev().copied().collect()
    }

    /// Weights on the `len - 1` successive increments of a window, oldest
    /// first. `sum_i w_i x_i == sum_j c_j (x_j - x_{j-1})` when `sum_i w_i == 0`.
    pub fn increment_weights(&self) -> Vec<f64> {
        let w = self.window_weights();
        let mut c = vec![0.0; w.len() - 1];
        let mut tail = 0.0;
        for j in (1..w.len()).rev() {
            tail += w[j];
            c[j - 1] = tail;
        }
        c
    }

    /// Convolve a whole series; element `t` holds the response centred on
    /// sample `t`, or `None` within `radius` of either end.
    pub fn filter_series(&self, series: &[f64]) -> Vec<Option<f64>> {
        let w = self.window_weights();
        let r = self.radius;
        (0..series.len())
            .map(|t| {
                if t < r || t + r >= series.len() {
                    None
                } else {
                    Some(w.iter().zip(&series[t - r..=t + r]).map(|(a, b)| a * b).sum())
                }
            })
            .collect()
    }
}

/// `make_kernel(fps, omega, radius_mult)`.
pub fn make_kernel(fps: f64, omega: f64, radius_mult: f64) -> Result<JerkKernel> {
    JerkKernel::new(fps, omega, radius_mult)
}

/// Heart rate in beats per minute to Hz.
pub fn bpm_to_hz(bpm: f64) -> f64 {
    bpm / 60.0
}

/// Unwrapped phase track of one coefficient with a ring of recent samples.
#[derive(Clone, Debug)]
pub struct PhaseState {
    ring: Vec<f64>,
    head: usize,
    filled: usize,
    previous: Option<Complex64>,
    accumulated: f64,
}

impl PhaseState {
    pub fn new(kernel: &JerkKernel) -> Self {
        Self::with_capacity(kernel.len())
    }

    pub fn with_capacity(len: usize) -> Self {
        assert!(len > 0, "phase ring needs capacity");
        Self {
            ring: vec![0.0; len],
            head: 0,
            filled: 0,
            previous: None,
            accumulated: 0.0,
        }
    }

    /// Track one new coefficient; returns the unwrapped phase sample.
    pub fn push_phase(&mut self, coeff: Complex64) -> f64 {
        let increment = self.increment(coeff);
        self.accumulated += increment;
        self.ring[self.head] = self.accumulated;
        self.head = (self.head + 1) % self.ring.len();
        self.filled = (self.filled + 1).min(self.ring.len());
        self.accumulated
    }

    fn increment(&mut self, coeff: Complex64) -> f64 {
        if coeff.norm() < AMPLITUDE_FLOOR {
            return 0.0;
        }
        match self.previous.replace(coeff) {
            None => 0.0,
            Some(prev) => arg_half_open(coeff * prev.conj()),
        }
    }

    pub fn accumulated(&self) -> f64 {
        self.accumulated
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.ring.len()
    }

    pub fn capacity(&self) -> usize {
        self.ring.len()
    }

    /// Buffered samples, oldest first.
    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        let len = self.ring.len();
        let start = if self.is_full() { self.head } else { 0 };
        (0..self.filled).map(move |i| self.ring[(start + i) % len])
    }
}

/// Jerk response for the sample `kernel.radius` frames before the newest one,
/// or `None` during warm-up.
pub fn jerk_response(state: &PhaseState, kernel: &JerkKernel) -> Option<f64> {
    if !state.is_full() || state.capacity() != kernel.len() {
        return None;
    }
    let w = kernel.window_weights();
    Some(w.iter().zip(state.samples()).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert!((wrap_phase(PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_phase(0.25) - 0.25).abs() < 1e-15);
        assert_eq!(arg_half_open(Complex64::new(-1.0, -0.0)), PI);
    }

    #[test]
    fn sigma_from_rate_and_frequency() {
        let k = make_kernel(25.0, 1.2, DEFAULT_RADIUS_MULT).unwrap();
        assert!((k.sigma - 5.208_333_333_333_333).abs() < 1e-12);
        assert_eq!(k.radius, 21);
        assert_eq!(k.latency(), 21);
        assert_eq!(k.len(), 43);
    }

    #[test]
    fn rejects_frequency_above_nyquist() {
        let err = make_kernel(25.0, 12.5, 4.0).unwrap_err();
        assert!(err.to_string().contains("cardiac frequency unresolvable"));
        assert!(make_kernel(25.0, 0.0, 4.0).is_err());
        assert!(make_kernel(0.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn raw_centre_tap_vanishes() {
        let taps = raw_jerk_taps(5.0, 20);
        assert_eq!(taps[20], 0.0);
    }

    #[test]
    fn increment_weights_match_window_weights() {
        let k = make_kernel(25.0, 1.0, 4.0).unwrap();
        let series: Vec<f64> = (0..k.len()).map(|i| (0.3 * i as f64).sin() + 0.01 * (i * i) as f64).collect();
        let direct: f64 = k.window_weights().iter().zip(&series).map(|(a, b)| a * b).sum();
        let incr: f64 = k
            .increment_weights()
            .iter()
            .zip(series.windows(2))
            .map(|(c, w)| c * (w[1] - w[0]))
            .sum();
        assert!((direct - incr).abs() < 1e-12);
    }

    #[test]
    fn identical_coefficients_give_zero_increment() {
        let mut s = PhaseState::with_capacity(5);
        let c = Complex64::from_polar(0.7, 1.3);
        s.push_phase(c);
        assert_eq!(s.push_phase(c), 0.0);
    }

    #[test]
    fn exact_increments_accumulate() {
        let mut s = PhaseState::with_capacity(7);
        for t in 0..200 {
            let v = s.push_phase(Complex64::from_polar(1.0, 0.1 * t as f64));
            assert!((v - 0.1 * t as f64).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn crossing_pi_unwraps() {
        let mut s = PhaseState::with_capacity(3);
        s.push_phase(Complex64::from_polar(1.0, 3.0));
        let v = s.push_phase(Complex64::from_polar(1.0, -3.0));
        assert!((v - (2.0 * PI - 6.0)).abs() < 1e-12);
        assert!((v - 0.283).abs() < 1e-3);
    }

    #[test]
    fn tiny_amplitude_freezes_phase() {
        let mut s = PhaseState::with_capacity(3);
        s.push_phase(Complex64::from_polar(1.0, 0.0));
        assert_eq!(s.push_phase(Complex64::from_polar(1e-9, 2.0)), 0.0);
        // the reference coefficient is the last one above the floor
        let v = s.push_phase(Complex64::from_polar(1.0, 0.5));
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn warm_up_signals_not_ready() {
        let k = make_kernel(25.0, 1.2, 4.0).unwrap();
        let mut s = PhaseState::new(&k);
        for t in 0..k.len() - 1 {
            s.push_phase(Complex64::from_polar(1.0, 0.01 * t as f64));
            assert!(jerk_response(&s, &k).is_none());
        }
        s.push_phase(Complex64::from_polar(1.0, 0.0));
        assert!(jerk_response(&s, &k).is_some());
    }
}
