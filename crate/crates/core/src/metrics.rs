//! Frame-wise SSIM and spatio-temporal cross-sections.
//!
//! SSIM is computed on luma with an 11×11 Gaussian window (σ = 1.5),
//! `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, population covariances, and
//! averaged over windows that lie fully inside the frame.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::{quantize, Frame, Plane};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-0.5 * x * x / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode filter; output is `(w - 10) × (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (j, &kj) in k.iter().enumerate() {
            let line = &rows[(y + j) * ow..(y + j + 1) * ow];
            for (o, &v) in out[y * ow..(y + 1) * ow].iter_mut().zip(line) {
                *o += kj * v;
            }
        }
    }
    out
}

/// Mean SSIM between two luma planes.
pub fn ssim_plane(a: &Plane, b: &Plane) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "ssim of {}x{} against {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall { width: w, height: h });
    }
    if a.data() == b.data() {
        return Ok(1.0);
    }
    let k = gaussian_window();
    let av: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let aa: Vec<f64> = av.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = bv.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&av, w, h, &k);
    let mu_b = filter_valid(&bv, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Mean SSIM between the luma of two frames.
pub fn ssim_frame(a: &Frame, b: &Frame) -> Result<f64> {
    ssim_plane(&a.luma, &b.luma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimSummary {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SsimSeries {
    pub values: Vec<f64>,
    /// Frames left out of the summary (passthrough frames).
    pub excluded: Vec<bool>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl SsimSeries {
    pub fn push(&mut self, value: f64, excluded: bool) {
        self.values.push(value);
        self.excluded.push(excluded);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn included(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.excluded).filter(|(_, &e)| !e).map(|(&v, _)| v)
    }

    /// `None` when every frame is excluded.
    pub fn summary(&self) -> Option<SsimSummary> {
        let mut v: Vec<f64> = self.included().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(SsimSummary {
            count: v.len(),
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }

    /// Columns: `frame,ssim,excluded`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "frame,ssim,excluded").map_err(io)?;
        for (t, (v, e)) in self.values.iter().zip(&self.excluded).enumerate() {
            writeln!(w, "{t},{v},{}", u8::from(*e)).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.summary())
            .map_err(|e| Error::format("ssim summary", e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Compare `a[t]` with `b[t + offset]` for every `t`, in parallel.
/// `exclude(t)` marks frames to leave out of the summary.
pub fn ssim_series(a: &[Frame], b: &[Frame], offset: usize, exclude: impl Fn(usize) -> bool + Sync) -> Result<SsimSeries> {
    if b.len() != a.len() + offset {
        return Err(Error::ShapeMismatch(format!(
            "{} frames cannot be aligned with {} frames at offset {offset}",
            a.len(),
            b.len()
        )));
    }
    let values = a
        .par_iter()
        .enumerate()
        .map(|(t, fa)| ssim_frame(fa, &b[t + offset]))
        .collect::<Result<Vec<_>>>()?;
    let excluded = (0..a.len()).map(exclude).collect();
    Ok(SsimSeries { values, excluded })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl SampleLine {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    /// One sample per pixel of length, endpoints included.
    pub fn sample_count(&self) -> usize {
        self.length().ceil() as usize + 1
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        let n = self.sample_count();
        let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        (self.x0 + s * (self.x1 - self.x0), self.y0 + s * (self.y1 - self.y0))
    }

    pub fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        let inside = |x: f64, y: f64| {
            x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64
        };
        if inside(self.x0, self.y0) && inside(self.x1, self.y1) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "line ({}, {})-({}, {}) leaves the {width}x{height} frame",
                self.x0, self.y0, self.x1, self.y1
            )))
        }
    }
}

/// Rows are positions along the line, columns are frames.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossSection {
    pub line: SampleLine,
    pub samples: usize,
    pub frames: usize,
    /// Row-major, `samples × frames`.
    pub data: Vec<f32>,
}

impl CrossSection {
    pub fn value(&self, sample: usize, frame: usize) -> f32 {
        self.data[sample * self.frames + frame]
    }

    pub fn column(&self, frame: usize) -> Vec<f32> {
        (0..self.samples).map(|s| self.value(s, frame)).collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        image::save_buffer(path, &bytes, self.frames as u32, self.samples as u32, image::ExtendedColorType::L8)
            .map_err(|e| Error::format("cross-section png", format!("{}: {e}", path.display())))
    }
}

/// Accumulates one column per pushed frame.
pub struct CrossSectionBuilder {
    line: SampleLine,
    width: usize,
    height: usize,
    columns: Vec<Vec<f32>>,
}

impl CrossSectionBuilder {
    pub fn new(line: SampleLine, width: usize, height: usize) -> Result<Self> {
        line.check_inside(width, height)?;
        Ok(Self {
            line,
            width,
            height,
            columns: Vec::new(),
        })
    }

    pub fn push(&mut self, frame: &Frame) -> Result<()> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::DimensionMismatch {
                index: frame.index,
                width: self.width,
                height: self.height,
                got_width: frame.width(),
                got_height: frame.height(),
            });
        }
        let col = (0..self.line.sample_count())
            .map(|i| {
                let (x, y) = self.line.point(i);
                frame.luma.sample_bilinear(x, y) as f32
            })
            .collect();
        self.columns.push(col);
        Ok(())
    }

    pub fn finish(self) -> CrossSection {
        let samples = self.line.sample_count();
        let frames = self.columns.len();
        let mut data = vec![0.0; samples * frames];
        for (t, col) in self.columns.iter().enumerate() {
            for (s, &v) in col.iter().enumerate() {
                data[s * frames + t] = v;
            }
        }
        CrossSection {
            line: self.line,
            samples,
            frames,
            data,
        }
    }
}

pub fn cross_section<'a, I>(frames: I, line: SampleLine) -> Result<CrossSection>
where
    I: IntoIterator<Item = &'a Frame>,
{
    let mut iter = frames.into_iter().peekable();
    let first = iter.peek().ok_or(Error::NoFrames)?;
    let mut builder = CrossSectionBuilder::new(line, first.width(), first.height())?;
    for f in iter {
        builder.push(f)?;
    }
    Ok(builder.finish())
}

/// Sub-sample edge location: centroid of `|profile[i+1] - profile[i]|` over
/// `lo..hi`, in sample units.
pub fn edge_centroid(profile: &[f32], lo: usize, hi: usize) -> f64 {
    let hi = hi.min(profile.len() - 1);
    let (mut num, mut den) = (0.0, 0.0);
    for i in lo..hi {
        let g = (profile[i + 1] as f64 - profile[i] as f64).abs();
        num += g * (i as f64 + 0.5);
        den += g;
    }
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

/// Pearson correlation of two equal-length sequences; 0 when either is flat.
pub fn correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
