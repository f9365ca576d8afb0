//! Ground-truth generators: pulse displacement profiles and rendered scenes
//! of a pulsating vessel with an optional sweeping tool.
//!
//! Profile amplitude is half the peak-to-peak displacement and the series
//! has zero mean over a cycle. The vessel dilates symmetrically: both
//! boundaries sit at signed distance `±(half_width + displacement)` from
//! the centreline.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::{Frame, Plane};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Maximum relative deviation of each beat's period.
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseProfile {
    pub bpm: f64,
    pub fps: f64,
    /// Half the peak-to-peak displacement, in pixels.
    pub amplitude: f64,
    /// Cycle phase in `[0, 1)` of the systolic peak.
    pub systolic_center: f64,
    /// Gaussian width of the systolic bump, in cycles. Smaller is sharper.
    pub systolic_width: f64,
    /// Dicrotic bump height relative to the systolic one.
    pub dicrotic_amplitude: f64,
    /// Dicrotic peak delay after the systolic peak, in cycles.
    pub dicrotic_delay: f64,
    pub dicrotic_width: f64,
    pub frames: usize,
    pub jitter: Option<Jitter>,
}

impl PulseProfile {
    pub fn new(bpm: f64, fps: f64, amplitude: f64, frames: usize) -> Self {
        Self {
            bpm,
            fps,
            amplitude,
            systolic_center: 0.2,
            systolic_width: 0.05,
            dicrotic_amplitude: 0.35,
            dicrotic_delay: 0.25,
            dicrotic_width: 0.08,
            frames,
            jitter: None,
        }
    }

    pub fn with_jitter(mut self, fraction: f64, seed: u64) -> Self {
        self.jitter = Some(Jitter { fraction, seed });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be > 0, got {}", self.fps)));
        }
        if !(self.bpm.is_finite() && self.bpm > 0.0) {
            return Err(Error::Config(format!("bpm must be > 0, got {}", self.bpm)));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::Config("amplitude must be finite".into()));
        }
        if !(self.systolic_width > 0.0 && self.dicrotic_width > 0.0) {
            return Err(Error::Config("bump widths must be > 0".into()));
        }
        if let Some(j) = self.jitter {
            if !(0.0..0.5).contains(&j.fraction) {
                return Err(Error::Config(format!("jitter fraction must be in [0, 0.5), got {}", j.fraction)));
            }
        }
        Ok(())
    }

    /// Period in (fractional) frames.
    pub fn period(&self) -> f64 {
        self.fps * 60.0 / self.bpm
    }

    fn raw_waveform(&self, u: f64) -> f64 {
        wrapped_gaussian(u, self.systolic_center, self.systolic_width)
            + self.dicrotic_amplitude
                * wrapped_gaussian(u, self.systolic_center + self.dicrotic_delay, self.dicrotic_width)
    }

    fn raw_mean(&self) -> f64 {
        let root = (2.0 * PI).sqrt();
        root * (self.systolic_width + self.dicrotic_amplitude * self.dicrotic_width)
    }

    /// Zero-mean waveform at cycle phase `u`, scaled to unit half peak-to-peak.
    pub fn waveform(&self, u: f64) -> f64 {
        (self.raw_waveform(u) - self.raw_mean()) / half_ptp(self)
    }

    /// Cycle phase of every frame, accounting for jitter.
    fn cycle_phases(&self) -> Vec<f64> {
        let period = self.period();
        let Some(jitter) = self.jitter else {
            return (0..self.frames).map(|t| (t as f64 / period).rem_euclid(1.0)).collect();
        };
        let mut rng = ChaCha8Rng::seed_from_u64(jitter.seed);
        let mut beat_start = 0.0;
        let mut beat_len = period * (1.0 + rng.random_range(-jitter.fraction..=jitter.fraction));
        (0..self.frames)
            .map(|t| {
                let t = t as f64;
                while t >= beat_start + beat_len {
                    beat_start += beat_len;
                    beat_len = period * (1.0 + rng.random_range(-jitter.fraction..=jitter.fraction));
                }
                (t - beat_start) / beat_len
            })
            .collect()
    }
}

fn wrapped_gaussian(u: f64, center: f64, width: f64) -> f64 {
    (-3..=3)
        .map(|k| {
            let x = (u - center + k as f64) / width;
            (-0.5 * x * x).exp()
        })
        .sum()
}

/// Displacement in pixels for every frame of the profile.
pub fn gen_profile(p: &PulseProfile) -> Result<Vec<f64>> {
    p.validate()?;
    if p.amplitude == 0.0 {
        return Ok(vec![0.0; p.frames]);
    }
    let scale = 1.0 / half_ptp(p);
    Ok(p.cycle_phases()
        .into_iter()
        .map(|u| p.amplitude * scale * (p.raw_waveform(u) - p.raw_mean()))
        .collect())
}

fn half_ptp(p: &PulseProfile) -> f64 {
    const SAMPLES: usize = 1 << 14;
    let (lo, hi) = (0..SAMPLES)
        .map(|i| p.raw_waveform(i as f64 / SAMPLES as f64))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    0.5 * (hi - lo)
}

/// Add a raised-cosine trapezoid excursion of height `magnitude` spanning
/// `[start, end]`, with `ramp` frames of rise and fall inside that span.
pub fn inject_tool_excursion(series: &mut [f64], start: usize, end: usize, magnitude: f64, ramp: usize) {
    if start > end {
        return;
    }
    for (t, v) in series.iter_mut().enumerate().take(end + 1).skip(start) {
        let into = (t - start) as f64;
        let left = (end - t) as f64;
        let edge = into.min(left);
        let w = if ramp == 0 || edge >= ramp as f64 {
            1.0
        } else {
            0.5 - 0.5 * (PI * edge / ramp as f64).cos()
        };
        *v += magnitude * w;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    /// Rest half-width in pixels.
    pub half_width: f64,
    /// Angle of the centreline in radians, 0 = horizontal.
    pub angle: f64,
    /// Fractional darkening inside the vessel.
    pub contrast: f64,
    /// Edge transition scale in pixels.
    pub edge_softness: f64,
}

impl Default for Vessel {
    fn default() -> Self {
        Self {
            half_width: 12.0,
            angle: 0.0,
            contrast: 0.5,
            edge_softness: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tool {
    pub width: f64,
    pub height: f64,
    /// First frame showing the tool.
    pub entry: usize,
    /// Last frame showing the tool.
    pub exit: usize,
    /// Top-left corner at the entry frame.
    pub start: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub luma: f64,
}

impl Tool {
    pub fn is_active(&self, t: usize) -> bool {
        (self.entry..=self.exit).contains(&t)
    }

    pub fn top_left(&self, t: usize) -> (f64, f64) {
        let dt = t as f64 - self.entry as f64;
        (self.start.0 + self.velocity.0 * dt, self.start.1 + self.velocity.1 * dt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub vessel: Vessel,
    pub background: f64,
    pub texture_amplitude: f64,
    pub texture_seed: u64,
    pub tool: Option<Tool>,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl SyntheticScene {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            vessel: Vessel::default(),
            background: 0.6,
            texture_amplitude: 0.04,
            texture_seed: 7,
            tool: None,
            noise_sigma: 0.0,
            noise_seed: 11,
        }
    }

    /// A tool sweeping horizontally across the whole frame, over the vessel,
    /// between `entry` and `exit` inclusive.
    pub fn with_sweep(mut self, entry: usize, exit: usize) -> Self {
        let (w, h) = (20.0, 0.4 * self.height as f64);
        let span = (exit - entry).max(1) as f64;
        let travel = self.width as f64 + w;
        self.tool = Some(Tool {
            width: w,
            height: h,
            entry,
            exit,
            start: (-w, 0.5 * (self.height as f64 - h)),
            velocity: (travel / span, 0.0),
            luma: 0.95,
        });
        self
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("scene dimensions must be positive".into()));
        }
        if let Some(tool) = &self.tool {
            if tool.width > self.width as f64 || tool.height > self.height as f64 {
                return Err(Error::Config(format!(
                    "tool {}x{} is larger than the {}x{} frame",
                    tool.width, tool.height, self.width, self.height
                )));
            }
            if tool.entry > tool.exit || tool.exit >= frames {
                return Err(Error::Config(format!(
                    "tool interval {}..={} outside the {frames}-frame duration",
                    tool.entry, tool.exit
                )));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.width as f64 - 1.0), 0.5 * (self.height as f64 - 1.0))
    }

    /// Signed distance of pixel centre `(x, y)` from the vessel centreline.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (cx, cy) = self.center();
        let (s, c) = self.vessel.angle.sin_cos();
        -(x - cx) * s + (y - cy) * c
    }

    /// Distance of each boundary from the centreline for a displacement.
    pub fn edge_offset(&self, displacement: f64) -> f64 {
        self.vessel.half_width + displacement
    }

    fn texture(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.texture_seed);
        (0..6)
            .map(|_| {
                let fx = rng.random_range(1.0..5.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let fy = rng.random_range(1.0..5.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.5..1.0);
                (fx, fy, phase, amp)
            })
            .collect()
    }

    /// Render frame `t` at the given vessel displacement. The tool mask marks
    /// pixels with any tool coverage.
    pub fn render_frame(&self, t: usize, displacement: f64) -> (Frame, Option<Vec<bool>>) {
        let texture = self.texture();
        self.render_with_texture(t, displacement, &texture)
    }

    fn render_with_texture(&self, t: usize, displacement: f64, texture: &[(f64, f64, f64, f64)]) -> (Frame, Option<Vec<bool>>) {
        let (w, h) = (self.width, self.height);
        let norm: f64 = texture.iter().map(|p| p.3).sum::<f64>().max(1e-12);
        let hw = self.edge_offset(displacement);
        let soft = self.vessel.edge_softness;
        let step = |x: f64| 0.5 * (1.0 + (x / soft).tanh());
        let tool = self.tool.as_ref().filter(|tool| tool.is_active(t));
        let mut mask = tool.map(|_| vec![false; w * h]);
        let mut data = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                let tex: f64 = texture
                    .iter()
                    .map(|&(fx, fy, ph, a)| a * (2.0 * PI * (fx * xf / w as f64 + fy * yf / h as f64) + ph).cos())
                    .sum::<f64>()
                    / norm;
                let bg = self.background * (1.0 + self.texture_amplitude * tex);
                let d = self.signed_distance(xf, yf);
                let inside = step(hw - d) + step(hw + d) - 1.0;
                let mut v = bg * (1.0 - self.vessel.contrast * inside);
                if let Some(tool) = tool {
                    let (left, top) = tool.top_left(t);
                    let cover = overlap(xf - 0.5, xf + 0.5, left, left + tool.width)
                        * overlap(yf - 0.5, yf + 0.5, top, top + tool.height);
                    if cover > 0.0 {
                        v = (1.0 - cover) * v + cover * tool.luma;
                        mask.as_mut().expect("mask exists while tool active")[y * w + x] = true;
                    }
                }
                data[y * w + x] = v as f32;
            }
        }
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let normal = Normal::new(0.0, self.noise_sigma).expect("finite positive sigma");
            for v in &mut data {
                *v += normal.sample(&mut rng) as f32;
            }
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        let luma = Plane::from_vec(w, h, data).expect("buffer matches dimensions");
        (Frame::new(luma, t), mask)
    }

    /// Render every frame of `profile` in parallel.
    pub fn render_all(&self, profile: &[f64]) -> Result<Vec<RenderedFrame>> {
        self.validate(profile.len())?;
        let texture = self.texture();
        Ok(profile
            .par_iter()
            .enumerate()
            .map(|(t, &d)| {
                let (frame, tool_mask) = self.render_with_texture(t, d, &texture);
                RenderedFrame {
                    frame,
                    tool_mask,
                    displacement: d,
                }
            })
            .collect())
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

pub struct RenderedFrame {
    pub frame: Frame,
    /// Present only while the tool is in view.
    pub tool_mask: Option<Vec<bool>>,
    pub displacement: f64,
}

/// Lazily renders one frame per profile sample.
pub struct SceneRender<'a> {
    scene: &'a SyntheticScene,
    profile: &'a [f64],
    texture: Vec<(f64, f64, f64, f64)>,
    next: usize,
}

impl Iterator for SceneRender<'_> {
    type Item = RenderedFrame;

    fn next(&mut self) -> Option<RenderedFrame> {
        let &d = self.profile.get(self.next)?;
        let (frame, tool_mask) = self.scene.render_with_texture(self.next, d, &self.texture);
        self.next += 1;
        Some(RenderedFrame {
            frame,
            tool_mask,
            displacement: d,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.profile.len() - self.next;
        (left, Some(left))
    }
}

pub fn render_scene<'a>(scene: &'a SyntheticScene, profile: &'a [f64]) -> Result<SceneRender<'a>> {
    scene.validate(profile.len())?;
    Ok(SceneRender {
        scene,
        profile,
        texture: scene.texture(),
        next: 0,
    })
}

/// Columns: `frame,displacement,edge_offset,tool_active`.
pub fn write_ground_truth_csv(path: impl AsRef<Path>, scene: &SyntheticScene, profile: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "frame,displacement,edge_offset,tool_active").map_err(io)?;
    for (t, &d) in profile.iter().enumerate() {
        let active = scene.tool.as_ref().is_some_and(|tool| tool.is_active(t));
        writeln!(w, "{t},{d},{},{}", scene.edge_offset(d), u8::from(active)).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// 8-bit grayscale PNG, 255 on tool pixels.
pub fn write_mask_png(path: impl AsRef<Path>, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    image::save_buffer(path, &bytes, width as u32, height as u32, image::ExtendedColorType::L8)
        .map_err(|e| Error::format("mask png", format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_is_flat() {
        let p = PulseProfile::new(72.0, 25.0, 0.0, 50);
        assert!(gen_profile(&p).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn peak_to_peak_is_twice_amplitude() {
        let p = PulseProfile::new(60.0, 400.0, 0.1, 400);
        let s = gen_profile(&p).unwrap();
        let hi = s.iter().cloned().fold(f64::MIN, f64::max);
        let lo = s.iter().cloned().fold(f64::MAX, f64::min);
        assert!((hi - lo - 0.2).abs() < 1e-4, "{}", hi - lo);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn oversized_tool_rejected() {
        let mut scene = SyntheticScene::new(32, 32).with_sweep(2, 5);
        scene.tool.as_mut().unwrap().width = 40.0;
        assert!(scene.validate(10).is_err());
        let scene = SyntheticScene::new(32, 32).with_sweep(2, 12);
        assert!(scene.validate(10).is_err());
    }

    #[test]
    fn excursion_shape() {
        let mut s = vec![0.0; 20];
        inject_tool_excursion(&mut s, 5, 15, 2.0, 4);
        assert_eq!(s[4], 0.0);
        assert_eq!(s[5], 0.0);
        assert_eq!(s[10], 2.0);
        assert!((s[7] - 1.0).abs() < 1e-12);
        assert_eq!(s[16], 0.0);
    }
}
