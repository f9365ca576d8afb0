mod common;

use std::f64::consts::PI;

use common::oracle::{dtft, fd_gaussian_jerk, fitted_amplitude};
use num_complex::Complex64;
use proptest::prelude::*;
use pulsemag::temporal_filter::*;

#[test]
fn taps_match_finite_difference_oracle() {
    for (fps, omega) in [(25.0, 1.2), (30.0, 1.0), (60.0, 1.5), (25.0, 2.0)] {
        let k = JerkKernel::new(fps, omega, 6.0).unwrap();
        let mut oracle: Vec<f64> = (0..k.len())
            .map(|i| fd_gaussian_jerk(k.sigma, i as f64 - k.radius as f64))
            .collect();
        let gain = dtft(&oracle, fps, omega).norm();
        oracle.iter_mut().for_each(|v| *v /= gain);
        let peak = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in k.taps.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-3 * peak, "fps {fps} omega {omega}: {a} vs {b}");
        }
    }
}

#[test]
fn polynomial_inputs_are_rejected() {
    let k = JerkKernel::new(25.0, 1.2, DEFAULT_RADIUS_MULT).unwrap();
    let n = 120;
    let series: [Vec<f64>; 3] = [
        vec![1.7; n],
        (0..n).map(|t| 0.3 * t as f64 - 2.0).collect(),
        (0..n).map(|t| 0.01 * (t as f64).powi(2) - 0.2 * t as f64 + 1.0).collect(),
    ];
    for s in &series {
        for d in k.filter_series(s).into_iter().flatten() {
            assert!(d.abs() <= 1e-9, "{d}");
        }
    }
}

#[test]
fn unit_gain_at_heart_rate() {
    for (fps, omega) in [(25.0, 1.2), (25.0, 1.0), (50.0, 0.8), (100.0, 2.5)] {
        for mult in [3.0, 4.0, 6.0] {
            let k = JerkKernel::new(fps, omega, mult).unwrap();
            let g = dtft(&k.taps, fps, omega).norm();
            assert!((g - 1.0).abs() <= 1e-6, "{g}");
            assert!((k.response_at(omega).norm() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn sinusoidal_phase_matches_dtft_prediction() {
    let (fps, omega, delta) = (25.0, 1.2, 0.05);
    let k = JerkKernel::new(fps, omega, DEFAULT_RADIUS_MULT).unwrap();
    let predicted = delta * dtft(&k.taps, fps, omega).norm();
    let w = 2.0 * PI * omega / fps;
    let mut state = PhaseState::new(&k);
    let mut out = Vec::new();
    for n in 0..400 {
        state.push_phase(Complex64::from_polar(0.8, 0.4 + delta * (w * n as f64).sin()));
        if let Some(d) = jerk_response(&state, &k) {
            out.push((n - k.radius, d));
        }
    }
    let measured = fitted_amplitude(&out, w);
    assert!((measured - predicted).abs() <= 0.02 * predicted, "{measured} vs {predicted}");
}


#[test]
fn filter_series_agrees_with_streaming_state() {
    let k = JerkKernel::new(25.0, 1.2, DEFAULT_RADIUS_MULT).unwrap();
    let phases: Vec<f64> = (0..150).map(|t| 0.02 * t as f64 + 0.3 * (0.41 * t as f64).sin()).collect();
    let batch = k.filter_series(&phases);
    let mut state = PhaseState::new(&k);
    for (n, &p) in phases.iter().enumerate() {
        state.push_phase(Complex64::from_polar(1.0, p));
        if let Some(d) = jerk_response(&state, &k) {
            let expected = batch[n - k.radius].unwrap();
            assert!((d - expected).abs() < 1e-9);
        }
    }
}

#[test]
fn latency_is_radius() {
    let k = JerkKernel::new(25.0, 1.2, DEFAULT_RADIUS_MULT).unwrap();
    assert_eq!(k.radius, 21);
    assert_eq!(k.latency(), 21);
    assert_eq!(k.len(), 43);
    assert!((bpm_to_hz(72.0) - 1.2).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_invariants(fps in 10.0f64..120.0, frac in 0.02f64..0.45, mult in 2.0f64..7.0) {
        let omega = frac * fps;
        let k = JerkKernel::new(fps, omega, mult).unwrap();
        prop_assert_eq!(k.len(), 2 * k.radius + 1);
        prop_assert_eq!(k.taps[k.radius], 0.0);
        for j in 1..=k.radius {
            prop_assert_eq!(k.taps[k.radius + j], -k.taps[k.radius - j]);
        }
        let scale: f64 = k.taps.iter().map(|t| t.abs()).sum();
        for p in 0..3 {
            let m: f64 = k.taps.iter().enumerate()
                .map(|(i, t)| t * (i as f64 - k.radius as f64).powi(p))
                .sum();
            prop_assert!(m.abs() <= 1e-9 * scale * (k.radius as f64).powi(p).max(1.0));
        }
        prop_assert!((k.response_at(omega).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn filtering_is_linear(
        x in proptest::collection::vec(-3.0f64..3.0, 60),
        y in proptest::collection::vec(-3.0f64..3.0, 60),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let k = JerkKernel::new(25.0, 1.5, 3.0).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (fx, fy, fm) = (k.filter_series(&x), k.filter_series(&y), k.filter_series(&mix));
        for i in 0..mix.len() {
            match (fx[i], fy[i], fm[i]) {
                (Some(p), Some(q), Some(m)) => prop_assert!((a * p + b * q - m).abs() < 1e-9),
                (None, None, None) => {}
                _ => prop_assert!(false, "readiness differs at {}", i),
            }
        }
    }

    #[test]
    fn unwrapping_recovers_small_steps(
        start in -PI..PI,
        steps in proptest::collection::vec(-3.1f64..3.1, 1..80),
        amp in 1e-3f64..10.0,
    ) {
        let mut state = PhaseState::with_capacity(5);
        let mut phase = start;
        state.push_phase(Complex64::from_polar(amp, phase));
        let mut expected = 0.0;
        for s in steps {
            phase += s;
            expected += s;
            let got = state.push_phase(Complex64::from_polar(amp, phase));
            prop_assert!((got - expected).abs() < 1e-9, "{} vs {}", got, expected);
        }
    }

    #[test]
    fn wrap_stays_half_open(x in -100.0f64..100.0) {
        let w = wrap_phase(x);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!(((x - w) / (2.0 * PI) - ((x - w) / (2.0 * PI)).round()).abs() < 1e-9);
    }
}
