//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::f64::consts::PI;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::oracle::{dtft, fd_gaussian_jerk, fitted_amplitude, reference_pair, SSIM_REFERENCE};
use common::{natural, psnr, uniform_noise, NATURAL};
use num_complex::Complex64;
use pulsemag::frame_io::{Frame, VideoMeta};
use pulsemag::magnify::{run_1d_demo, FrameStatus, MagnifyConfig, Magnifier, Mode, OutputFrame, Variant};
use pulsemag::metrics::{edge_centroid, ssim_frame, ssim_plane, CrossSectionBuilder, SampleLine};
use pulsemag::pyramid::{make_spec, SteerablePyramid};
use pulsemag::synthetic::{gen_profile, inject_tool_excursion, PulseProfile, SyntheticScene};
use pulsemag::temporal_filter::{jerk_response, JerkKernel, PhaseState, DEFAULT_RADIUS_MULT};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const SIZE: usize = 180;
const FRAMES: usize = 250;
const FPS: f64 = 25.0;
const BPM: f64 = 72.0;
const SWEEP: (usize, usize) = (120, 170);
const ALPHA: f64 = 10.0;

fn c1_pyramid_round_trip() -> Outcome {
    let start = Instant::now();
    let pyr = SteerablePyramid::new(make_spec(SIZE, SIZE, 8, 4).map_err(|e| e.to_string())?);
    let mut worst = f64::INFINITY;
    let images = (0..100u64)
        .map(|seed| (format!("random {seed}"), uniform_noise(SIZE, SIZE, 1000 + seed)))
        .chain(NATURAL.iter().map(|n| (n.to_string(), natural(n))));
    for (name, img) in images {
        let rec = pyr.synthesize(&pyr.analyze_plane(&img).unwrap()).unwrap();
        let p = psnr(&img, &rec);
        ensure!(p >= 45.0, "{name}: PSNR {p:.2} dB");
        worst = worst.min(p);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed <= Duration::from_secs(10), "took {elapsed:.2?}");
    Ok(format!("105 images, min PSNR {worst:.1} dB, {elapsed:.2?}"))
}

fn c2_kernel() -> Outcome {
    let mut worst_tap = 0.0f64;
    for (fps, omega) in [(25.0, 1.2), (25.0, 1.0), (30.0, 1.5), (60.0, 1.2)] {
        let k = JerkKernel::new(fps, omega, 6.0).map_err(|e| e.to_string())?;
        let mut oracle: Vec<f64> = (0..k.len()).map(|i| fd_gaussian_jerk(k.sigma, i as f64 - k.radius as f64)).collect();
        let g = dtft(&oracle, fps, omega).norm();
        oracle.iter_mut().for_each(|v| *v /= g);
        let peak = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in k.taps.iter().zip(&oracle) {
            worst_tap = worst_tap.max((a - b).abs() / peak);
        }
    }
    ensure!(worst_tap <= 1e-3, "tap deviation {worst_tap:.2e} of peak");

    let k = JerkKernel::new(FPS, BPM / 60.0, DEFAULT_RADIUS_MULT).unwrap();
    let n = 200;
    let mut worst_poly = 0.0f64;
    for s in [
        vec![-0.7; n],
        (0..n).map(|t| 0.05 * t as f64 + 1.0).collect::<Vec<_>>(),
        (0..n).map(|t| 1e-3 * (t as f64).powi(2) - 0.04 * t as f64).collect(),
    ] {
        for d in k.filter_series(&s).into_iter().flatten() {
            worst_poly = worst_poly.max(d.abs());
        }
    }
    ensure!(worst_poly <= 1e-9, "polynomial response {worst_poly:.2e}");

    let mut worst_gain = 0.0f64;
    for (fps, omega) in [(25.0, 1.2), (25.0, 1.0), (50.0, 2.0), (30.0, 0.9)] {
        for mult in [3.0, 4.0, 6.0] {
            let k = JerkKernel::new(fps, omega, mult).unwrap();
            worst_gain = worst_gain.max((dtft(&k.taps, fps, omega).norm() - 1.0).abs());
        }
    }
    ensure!(worst_gain <= 1e-6, "gain error {worst_gain:.2e}");
    Ok(format!("taps {worst_tap:.1e} of peak, polynomials {worst_poly:.1e}, |H|-1 {worst_gain:.1e}"))
}

fn c3_sinusoid_oracle() -> Outcome {
    let (delta, omega) = (0.05, 1.2);
    let k = JerkKernel::new(FPS, omega, DEFAULT_RADIUS_MULT).unwrap();
    let predicted = delta * dtft(&k.taps, FPS, omega).norm();
    let w = 2.0 * PI * omega / FPS;
    let mut state = PhaseState::new(&k);
    let mut samples = Vec::new();
    for n in 0..500 {
        state.push_phase(Complex64::from_polar(0.5, -1.0 + delta * (w * n as f64).sin()));
        if let Some(d) = jerk_response(&state, &k) {
            samples.push((n - k.radius, d));
        }
    }
    let measured = fitted_amplitude(&samples, w);
    let rel = (measured - predicted).abs() / predicted;
    ensure!(rel <= 0.02, "measured {measured:.5} vs predicted {predicted:.5}");
    Ok(format!("amplitude {measured:.5} vs {predicted:.5} ({:.2}%)", 100.0 * rel))
}

fn c4_demo() -> Outcome {
    let mut profile = gen_profile(&PulseProfile::new(60.0, FPS, 0.1, 250)).unwrap();
    let (start, end) = (150, 200);
    inject_tool_excursion(&mut profile, start, end, 1.0, 5);
    let mut closures = Vec::new();
    let mut details = Vec::new();
    for beta in [0.5, 1.0, 3.0, 5.0] {
        let cfg = MagnifyConfig {
            alpha: ALPHA,
            beta,
            bpm: 60.0,
            ..MagnifyConfig::default()
        };
        let rows = run_1d_demo(&profile, FPS, &cfg).map_err(|e| e.to_string())?;
        closures.push(rows.iter().filter(|r| r.chi == Some(false)).count());
        if beta < 1.0 {
            continue;
        }
        let window = &rows[start..=end];
        let gated = window.iter().map(|r| (r.amplified_gated - r.phi).abs()).fold(0.0, f64::max);
        let ungated = window.iter().map(|r| (r.amplified_ungated - r.phi).abs()).fold(0.0, f64::max);
        ensure!(gated < ungated, "beta {beta}: gated {gated:.4} not below ungated {ungated:.4}");
        details.push(format!("b{beta}: {gated:.3}<{ungated:.3}"));
    }
    ensure!(closures.windows(2).all(|w| w[0] >= w[1]), "closure counts {closures:?} increase with beta");
    Ok(format!("{}; closures for beta 0.5/1/3/5 = {closures:?}", details.join(", ")))
}

/// Per-frame measurements of the four-variant sweep run.
struct SweepRun {
    elapsed: Duration,
    /// `[variant][frame]` SSIM against the input frame.
    ssim: Vec<Vec<f64>>,
    status: Vec<Vec<FrameStatus>>,
    /// SSIM(tmasf beta=3, vmm) per frame.
    gated_vs_vmm: Vec<f64>,
    /// Upper-edge position along the cross-section, input then each variant.
    edges: Vec<Vec<f64>>,
    displacement: Vec<f64>,
    digest: u64,
}


fn sweep_run(threads: usize) -> SweepRun {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let scene = SyntheticScene::new(SIZE, SIZE).with_sweep(SWEEP.0, SWEEP.1);
        let displacement = gen_profile(&PulseProfile::new(BPM, FPS, 0.1, FRAMES)).unwrap();
        let input: Vec<Frame> = scene.render_all(&displacement).unwrap().into_iter().map(|r| r.frame).collect();
        let meta = VideoMeta {
            fps: FPS,
            frame_count: FRAMES,
            width: SIZE,
            height: SIZE,
        };
        let cfg = MagnifyConfig {
            alpha: ALPHA,
            bpm: BPM,
            ..MagnifyConfig::default()
        };
        let variants = [Variant::vmm(), Variant::tmasf(1.0), Variant::tmasf(3.0), Variant::tmasf(5.0)];
        let mut m = Magnifier::with_variants(meta, cfg, &variants).unwrap();

        let (_, cy) = scene.center();
        let line = SampleLine::new(90.0, 60.0, 90.0, 120.0);
        let mut sections: Vec<CrossSectionBuilder> =
            (0..5).map(|_| CrossSectionBuilder::new(line, SIZE, SIZE).unwrap()).collect();
        for f in &input {
            sections[0].push(f).unwrap();
        }
        let mut run = SweepRun {
            elapsed: Duration::ZERO,
            ssim: vec![Vec::new(); 4],
            status: vec![Vec::new(); 4],
            gated_vs_vmm: Vec::new(),
            edges: Vec::new(),
            displacement: displacement.clone(),
            digest: 0,
        };
        let mut hasher = DefaultHasher::new();
        let mut consume = |outs: Vec<OutputFrame>, run: &mut SweepRun| {
            let t = outs[0].frame.index;
            for (v, o) in outs.iter().enumerate() {
                assert_eq!(o.frame.index, t);
                run.ssim[v].push(ssim_frame(&o.frame, &input[t]).unwrap());
                run.status[v].push(o.status);
                sections[v + 1].push(&o.frame).unwrap();
                for x in o.frame.luma.data() {
                    x.to_bits().hash(&mut hasher);
                }
            }
            run.gated_vs_vmm.push(ssim_frame(&outs[2].frame, &outs[0].frame).unwrap());
        };
        for f in input.iter().cloned() {
            if let Some(outs) = m.push(f).unwrap() {
                consume(outs, &mut run);
            }
        }
        for outs in m.finish().unwrap() {
            consume(outs, &mut run);
        }
        run.digest = hasher.finish();
        let upper = cy + scene.vessel.half_width - 60.0;
        let lo = (upper - 7.0).round() as usize;
        run.edges = sections
            .into_iter()
            .map(|b| {
                let xs = b.finish();
                (0..FRAMES).map(|t| edge_centroid(&xs.column(t), lo, lo + 14)).collect()
            })
            .collect();
        run.elapsed = start.elapsed();
        run
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Frames magnified by every variant.
fn common_frames(run: &SweepRun) -> Vec<usize> {
    (0..FRAMES)
        .filter(|&t| run.status.iter().all(|s| s[t] == FrameStatus::Magnified))
        .collect()
}

/// Frames whose whole temporal kernel window is free of the tool.
fn tool_free_frames(run: &SweepRun, radius: usize) -> Vec<usize> {
    common_frames(run)
        .into_iter()
        .filter(|&t| t + radius < SWEEP.0 || t > SWEEP.1 + radius)
        .collect()
}

fn c5_tool_suppression(run: &SweepRun) -> Outcome {
    let mut margin = f64::INFINITY;
    for t in SWEEP.0..=SWEEP.1 {
        let (gated, vmm) = (run.ssim[2][t], run.ssim[0][t]);
        ensure!(gated > vmm, "frame {t}: SSIM beta=3 {gated:.5} <= vmm {vmm:.5}");
        margin = margin.min(gated - vmm);
    }
    let frames = common_frames(run);
    let medians: Vec<f64> = run.ssim.iter().map(|s| median(frames.iter().map(|&t| s[t]).collect())).collect();
    let (vmm, b1, b3, b5) = (medians[0], medians[1], medians[2], medians[3]);
    ensure!(b1 >= b3 && b3 >= b5 && b5 >= vmm, "median order broken: b1 {b1:.5} b3 {b3:.5} b5 {b5:.5} vmm {vmm:.5}");
    ensure!(run.elapsed <= Duration::from_secs(300), "took {:.1?}", run.elapsed);
    Ok(format!(
        "sweep min margin {margin:.4}; medians over {} frames b1 {b1:.5} >= b3 {b3:.5} >= b5 {b5:.5} >= vmm {vmm:.5}; {:.1?}",
        frames.len(),
        run.elapsed
    ))
}

fn c6_magnification_preserved(run: &SweepRun, radius: usize) -> Outcome {
    let frames = tool_free_frames(run, radius);
    ensure!(frames.len() > 40, "only {} tool-free frames", frames.len());
    let worst = frames.iter().map(|&t| run.gated_vs_vmm[t]).fold(f64::INFINITY, f64::min);
    ensure!(worst >= 0.98, "SSIM(beta=3, vmm) drops to {worst:.4}");
    let ptp = |series: &[f64]| {
        let vals: Vec<f64> = frames.iter().map(|&t| series[t]).collect();
        vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let commanded = ptp(&run.displacement);
    let measured_in = ptp(&run.edges[0]);
    let reference = commanded.max(measured_in);
    let vmm = ptp(&run.edges[1]);
    let gated = ptp(&run.edges[3]);
    ensure!(vmm > reference && gated > reference, "edge ptp vmm {vmm:.4} beta=3 {gated:.4} vs input {reference:.4}");
    Ok(format!(
        "{} frames, min SSIM {worst:.4}; edge ptp input {measured_in:.3} (commanded {commanded:.3}) vmm {vmm:.3} beta=3 {gated:.3}",
        frames.len()
    ))
}

fn c7_limits() -> Outcome {
    let (size, n) = (SIZE, 72);
    let scene = SyntheticScene::new(size, size);
    let profile = gen_profile(&PulseProfile::new(BPM, FPS, 0.1, n)).unwrap();
    let input: Vec<Frame> = scene.render_all(&profile).unwrap().into_iter().map(|r| r.frame).collect();
    let meta = VideoMeta {
        fps: FPS,
        frame_count: n,
        width: size,
        height: size,
    };

    let cfg = MagnifyConfig {
        alpha: 0.0,
        bpm: BPM,
        mode: Mode::Vmm,
        ..MagnifyConfig::default()
    };
    let mut m = Magnifier::new(meta, cfg).unwrap();
    let mut worst_psnr = f64::INFINITY;
    let mut check = |o: &OutputFrame| worst_psnr = worst_psnr.min(psnr(&o.frame.luma, &input[o.frame.index].luma));
    for f in input.iter().cloned() {
        if let Some(o) = m.push(f).unwrap() {
            check(&o[0]);
        }
    }
    m.finish().unwrap().iter().for_each(|o| check(&o[0]));
    ensure!(worst_psnr >= 45.0, "alpha=0 PSNR {worst_psnr:.2}");

    let cfg = MagnifyConfig {
        alpha: ALPHA,
        bpm: BPM,
        ..MagnifyConfig::default()
    };
    let mut m = Magnifier::with_variants(meta, cfg, &[Variant::vmm(), Variant::tmasf(1e6)]).unwrap();
    m.set_inspection(true);
    let pyr = SteerablePyramid::new(m.pyramid().spec().clone());
    let (mut worst_diff, mut compared, mut amp_checked) = (0.0f32, 0, 0usize);
    for f in input.iter().cloned() {
        let Some(outs) = m.push(f).unwrap() else { continue };
        let (v, g) = (&outs[0], &outs[1]);
        if g.status == FrameStatus::Magnified {
            for (a, b) in v.frame.luma.data().iter().zip(g.frame.luma.data()) {
                worst_diff = worst_diff.max((a - b).abs());
            }
            compared += 1;
        }
        for o in &outs {
            let Some(ins) = &o.inspection else { continue };
            let a = pyr.analyze(&input[o.frame.index]).unwrap();
            for (pb, band) in ins.bands.iter().zip(&a.bands) {
                for (amp, c) in pb.amplitude.iter().zip(&band.coeffs) {
                    ensure!(*amp == c.norm() as f32, "amplitude changed at frame {}", o.frame.index);
                    amp_checked += 1;
                }
            }
            ensure!(ins.highpass == a.highpass && ins.lowpass == a.lowpass, "residual changed at frame {}", o.frame.index);
        }
    }
    ensure!(compared > 0, "no gated frames compared");
    ensure!(worst_diff <= 1e-6, "beta=1e6 differs from vmm by {worst_diff:.2e}");
    Ok(format!(
        "alpha=0 min PSNR {worst_psnr:.1} dB; beta=1e6 max diff {worst_diff:.1e} over {compared} frames; {amp_checked} amplitudes bit-exact"
    ))
}

fn c8_ssim() -> Outcome {
    let mut worst = 0.0f64;
    for (i, &expected) in SSIM_REFERENCE.iter().enumerate() {
        let (a, b) = reference_pair(i);
        let got = ssim_plane(&a, &b).map_err(|e| e.to_string())?;
        ensure!((got - expected).abs() <= 1e-4, "pair {i}: {got:.6} vs {expected:.6}");
        worst = worst.max((got - expected).abs());
    }
    for name in NATURAL {
        let a = natural(name);
        let s = ssim_plane(&a, &a).unwrap();
        ensure!(s == 1.0, "ssim({name}, {name}) = {s}");
    }
    Ok(format!("20 pairs, max deviation {worst:.1e}; ssim(a, a) = 1"))
}

fn c9_determinism(first: &SweepRun, threads: usize) -> Outcome {
    let second = sweep_run(threads);
    ensure!(second.digest == first.digest, "output digests differ ({:016x} vs {:016x})", first.digest, second.digest);
    ensure!(second.ssim == first.ssim, "SSIM series differ");
    Ok(format!("digest {:016x} identical with {threads} threads", first.digest))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name}: {detail}");
        results.push((name, outcome));
    };

    record("C1 pyramid round trip", &mut c1_pyramid_round_trip);
    record("C2 jerk kernel", &mut c2_kernel);
    record("C3 sinusoidal amplification oracle", &mut c3_sinusoid_oracle);
    record("C4 one-dimensional demo", &mut c4_demo);

    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let other_threads = if threads > 1 { 1 } else { 2 };
    let radius = JerkKernel::new(FPS, BPM / 60.0, DEFAULT_RADIUS_MULT).unwrap().radius;
    let run = catch_unwind(|| sweep_run(threads));
    match &run {
        Ok(run) => {
            record("C5 end-to-end tool suppression", &mut || c5_tool_suppression(run));
            record("C6 magnification preserved", &mut || c6_magnification_preserved(run, radius));
        }
        Err(_) => {
            record("C5 end-to-end tool suppression", &mut || Err("sweep run panicked".into()));
            record("C6 magnification preserved", &mut || Err("sweep run panicked".into()));
        }
    }
    record("C7 limit identities", &mut c7_limits);
    record("C8 SSIM reference", &mut c8_ssim);
    match &run {
        Ok(run) => record("C9 determinism across thread counts", &mut || c9_determinism(run, other_threads)),
        Err(_) => record("C9 determinism across thread counts", &mut || Err("sweep run panicked".into())),
    }

    let failed: Vec<&str> = results.iter().filter(|(_, o)| o.is_err()).map(|(n, _)| *n).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
