//! Frequency-domain complex steerable pyramid.
//!
//! Radial boundaries sit at `r_j = 2^(-j/F)` (normalized so `1.0` is the
//! Nyquist frequency along an axis) for `F = octave_fraction`. Each boundary
//! has a high mask `h_j` rising from 0 at `r_{j+1}` to 1 at `r_j` with a
//! half-cosine in `log2` radius, and a low mask `l_j = sqrt(1 - h_j^2)`.
//!
//! * high-pass residual: `h_0`
//! * band `s` (for `s in 0..n_scales`): `h_{s+1} * l_s`, times an oriented lobe
//! * low-pass residual: `l_{n_scales}`
//!
//! Because every transition spans exactly one boundary spacing, the squared
//! masks telescope to one. Angular lobes are `c * cos^(K-1)(theta - pi*k/K)`
//! on the half plane facing orientation `k` and zero on the other half, so
//! band coefficients are analytic (complex). The real part of the synthesis
//! sum recovers the missing half plane.
//!
//! Bands in octave `o = floor(s / F)` are stored at `1 / 2^o` resolution by
//! cropping the spectrum; the band support never reaches the crop edge.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::frame_io::{quantize, Frame, Plane, MIN_FRAME_SIDE};

pub const DEFAULT_ORIENTATIONS: usize = 8;
pub const DEFAULT_OCTAVE_FRACTION: usize = 4;

/// Minimum mirror padding on each side of the frame.
const MIN_PAD: usize = 4;

/// Filter-bank layout for a frame size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidSpec {
    pub width: usize,
    pub height: usize,
    pub n_orientations: usize,
    pub octave_fraction: usize,
    pub n_scales: usize,
    pub padded_width: usize,
    pub padded_height: usize,
    pub pad_left: usize,
    pub pad_top: usize,
}

/// Build the layout for a `width x height` frame.
///
/// The pyramid spans `floor(log2(min(width, height))) - 2` octaves, so
/// `n_scales = octave_fraction * octaves` and the low-pass cutoff sits at
/// `2^-octaves`. Padded dimensions are multiples of `2^octaves` so every
/// octave crops to an integer grid.
pub fn make_spec(
    width: usize,
    height: usize,
    n_orientations: usize,
    octave_fraction: usize,
) -> Result<PyramidSpec> {
    if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
        return Err(Error::TooSmall { width, height });
    }
    if n_orientations < 2 {
        return Err(Error::Config(format!(
            "need at least 2 orientations, got {n_orientations}"
        )));
    }
    if octave_fraction < 1 {
        return Err(Error::Config("octave fraction must be at least 1".into()));
    }
    let octaves = (width.min(height).ilog2() as usize).saturating_sub(2).max(1);
    let align = 1usize << octaves;
    let padded = |n: usize| (n + 2 * MIN_PAD).div_ceil(align) * align;
    let padded_width = padded(width);
    let padded_height = padded(height);
    Ok(PyramidSpec {
        width,
        height,
        n_orientations,
        octave_fraction,
        n_scales: octaves * octave_fraction,
        padded_width,
        padded_height,
        pad_left: (padded_width - width) / 2,
        pad_top: (padded_height - height) / 2,
    })
}

impl PyramidSpec {
    pub fn n_octaves(&self) -> usize {
        self.n_scales / self.octave_fraction
    }

    pub fn octave_of(&self, scale: usize) -> usize {
        scale / self.octave_fraction
    }

    pub fn band_count(&self) -> usize {
        self.n_scales * self.n_orientations
    }

    /// `(rows, cols)` of a band at `scale`.
    pub fn band_shape(&self, scale: usize) -> (usize, usize) {
        let o = self.octave_of(scale);
        (self.padded_height >> o, self.padded_width >> o)
    }

    /// Radial boundary `r_j` in normalized frequency.
    pub fn boundary(&self, j: usize) -> f64 {
        (-(j as f64) / self.octave_fraction as f64).exp2()
    }

    /// Bands in storage order: scale-major, orientation-minor.
    pub fn band_infos(&self) -> Vec<BandInfo> {
        let mut out = Vec::with_capacity(self.band_count());
        for scale in 0..self.n_scales {
            let (rows, cols) = self.band_shape(scale);
            for orientation in 0..self.n_orientations {
                out.push(BandInfo {
                    scale,
                    orientation,
                    rows,
                    cols,
                });
            }
        }
        out
    }

    /// Total number of complex coefficients across all bands.
    pub fn coefficient_count(&self) -> usize {
        self.band_infos().iter().map(|b| b.rows * b.cols).sum()
    }

    /// Centre angle of an orientation, radians.
    pub fn orientation_angle(&self, orientation: usize) -> f64 {
        PI * orientation as f64 / self.n_orientations as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandInfo {
    pub scale: usize,
    pub orientation: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BandInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Real 2D array on the padded grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub info: BandInfo,
    pub coeffs: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    pub bands: Vec<Band>,
    pub highpass: RealGrid,
    pub lowpass: RealGrid,
}

impl Pyramid {
    pub fn band(&self, scale: usize, orientation: usize) -> Option<&Band> {
        self.bands
            .iter()
            .find(|b| b.info.scale == scale && b.info.orientation == orientation)
    }
}

/// One nonzero filter weight: crop-grid index, full-grid index, weight.
#[derive(Clone, Copy, Debug)]
struct Tap {
    crop: u32,
    full: u32,
    weight: f64,
}

struct BandFilter {
    info: BandInfo,
    octave: usize,
    taps: Vec<Tap>,
}

/// Analysis/synthesis engine with cached masks and FFT plans.
pub struct SteerablePyramid {
    spec: PyramidSpec,
    full: Fft2,
    octave_ffts: Vec<Fft2>,
    highpass_mask: Vec<f64>,
    lowpass_mask: Vec<f64>,
    filters: Vec<BandFilter>,
}

#[inline]
fn high_mask(rho: f64, r: f64, twidth: f64) -> f64 {
    if rho >= r {
        1.0
    } else if rho <= r * (-twidth).exp2() {
        0.0
    } else {
        (0.5 * PI * (r / rho).log2() / twidth).cos()
    }
}

#[inline]
fn low_mask(rho: f64, r: f64, twidth: f64) -> f64 {
    let h = high_mask(rho, r, twidth);
    (1.0 - h * h).max(0.0).sqrt()
}

/// Lobe gain making the squared angular responses of `k` lobes sum to one
/// over the full circle once the real part of the synthesis is taken.
fn angular_gain(k: usize) -> f64 {
    let n = k - 1;
    // binom(2n, n) / 4^n, accumulated stably
    let mut ratio = 1.0f64;
    for i in 1..=n {
        ratio *= (n + i) as f64 / (4.0 * i as f64);
    }
    (2.0 / (k as f64 * ratio)).sqrt()
}

/// Signed frequency for FFT bin `i` of an `n`-point transform.
#[inline]
fn signed_bin(i: usize, n: usize) -> isize {
    if i < n.div_ceil(2) {
        i as isize
    } else {
        i as isize - n as isize
    }
}

impl SteerablePyramid {
    pub fn new(spec: PyramidSpec) -> Self {
        let (ph, pw) = (spec.padded_height, spec.padded_width);
        let mut planner = FftPlanner::new();
        let full = Fft2::new(&mut planner, ph, pw);
        let octave_ffts = (0..spec.n_octaves())
            .map(|o| Fft2::new(&mut planner, ph >> o, pw >> o))
            .collect();

        let twidth = 1.0 / spec.octave_fraction as f64;
        let polar = |ry: usize, rx: usize| {
            let fy = 2.0 * signed_bin(ry, ph) as f64 / ph as f64;
            let fx = 2.0 * signed_bin(rx, pw) as f64 / pw as f64;
            (fy.hypot(fx), fy.atan2(fx))
        };

        let mut highpass_mask = vec![0.0; ph * pw];
        let mut lowpass_mask = vec![0.0; ph * pw];
        let r_low = spec.boundary(spec.n_scales);
        for ry in 0..ph {
            for rx in 0..pw {
                let (rho, _) = polar(ry, rx);
                highpass_mask[ry * pw + rx] = high_mask(rho, 1.0, twidth);
                lowpass_mask[ry * pw + rx] = low_mask(rho, r_low, twidth);
            }
        }

        let gain = angular_gain(spec.n_orientations);
        let order = (spec.n_orientations - 1) as i32;
        let filters = spec
            .band_infos()
            .into_iter()
            .map(|info| {
                let octave = spec.octave_of(info.scale);
                let outer = spec.boundary(info.scale);
                let inner = spec.boundary(info.scale + 1);
                let centre = spec.orientation_angle(info.orientation);
                let mut taps = Vec::new();
                for cy in 0..info.rows {
                    let ry = signed_bin(cy, info.rows).rem_euclid(ph as isize) as usize;
                    for cx in 0..info.cols {
                        let rx = signed_bin(cx, info.cols).rem_euclid(pw as isize) as usize;
                        let (rho, theta) = polar(ry, rx);
                        let radial = high_mask(rho, inner, twidth) * low_mask(rho, outer, twidth);
                        if radial == 0.0 {
                            continue;
                        }
                        let c = (theta - centre).cos();
                        if c <= 0.0 {
                            continue;
                        }
                        let weight = radial * gain * c.powi(order);
                        if weight != 0.0 {
                            taps.push(Tap {
                                crop: (cy * info.cols + cx) as u32,
                                full: (ry * pw + rx) as u32,
                                weight,
                            });
                        }
                    }
                }
                BandFilter { info, octave, taps }
            })
            .collect();

        Self {
            spec,
            full,
            octave_ffts,
            highpass_mask,
            lowpass_mask,
            filters,
        }
    }

    pub fn spec(&self) -> &PyramidSpec {
        &self.spec
    }

    fn check_plane(&self, plane: &Plane) -> Result<()> {
        if plane.width() != self.spec.width || plane.height() != self.spec.height {
            return Err(Error::DimensionMismatch {
                index: 0,
                width: self.spec.width,
                height: self.spec.height,
                got_width: plane.width(),
                got_height: plane.height(),
            });
        }
        Ok(())
    }

    fn padded(&self, plane: &Plane) -> Vec<Complex64> {
        let s = &self.spec;
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let mut i = i;
            loop {
                if i < 0 {
                    i = -i - 1;
                } else if i >= n {
                    i = 2 * n - i - 1;
                } else {
                    return i as usize;
                }
            }
        };
        let mut buf = Vec::with_capacity(s.padded_width * s.padded_height);
        for py in 0..s.padded_height {
            let y = reflect(py as isize - s.pad_top as isize, s.height);
            for px in 0..s.padded_width {
                let x = reflect(px as isize - s.pad_left as isize, s.width);
                buf.push(Complex64::new(plane.get(x, y) as f64, 0.0));
            }
        }
        buf
    }

    /// Spectrum of the padded frame.
    fn spectrum(&self, plane: &Plane) -> Vec<Complex64> {
        let mut buf = self.padded(plane);
        self.full.forward(&mut buf);
        buf
    }

    fn residual(&self, spectrum: &[Complex64], mask: &[f64]) -> RealGrid {
        let n = self.full.len() as f64;
        let mut buf: Vec<Complex64> = spectrum.iter().zip(mask).map(|(x, m)| x * m).collect();
        self.full.inverse(&mut buf);
        RealGrid {
            rows: self.spec.padded_height,
            cols: self.spec.padded_width,
            data: buf.iter().map(|v| v.re / n).collect(),
        }
    }

    pub fn analyze(&self, frame: &Frame) -> Result<Pyramid> {
        self.analyze_plane(&frame.luma)
    }

    pub fn analyze_plane(&self, plane: &Plane) -> Result<Pyramid> {
        self.check_plane(plane)?;
        let spectrum = self.spectrum(plane);
        let n = self.full.len() as f64;
        let bands = self
            .filters
            .par_iter()
            .map(|f| {
                let mut buf = vec![Complex64::new(0.0, 0.0); f.info.len()];
                for t in &f.taps {
                    buf[t.crop as usize] = spectrum[t.full as usize] * t.weight;
                }
                self.octave_ffts[f.octave].inverse(&mut buf);
                for v in &mut buf {
                    *v /= n;
                }
                Band {
                    info: f.info,
                    coeffs: buf,
                }
            })
            .collect();
        Ok(Pyramid {
            bands,
            highpass: self.residual(&spectrum, &self.highpass_mask),
            lowpass: self.residual(&spectrum, &self.lowpass_mask),
        })
    }

    fn check_pyramid(&self, pyr: &Pyramid) -> Result<()> {
        if pyr.bands.len() != self.filters.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} bands, got {}",
                self.filters.len(),
                pyr.bands.len()
            )));
        }
        for (b, f) in pyr.bands.iter().zip(&self.filters) {
            if b.info != f.info || b.coeffs.len() != f.info.len() {
                return Err(Error::ShapeMismatch(format!(
                    "band (scale {}, orientation {}) has shape {}x{}, expected {}x{}",
                    f.info.scale, f.info.orientation, b.info.rows, b.info.cols, f.info.rows, f.info.cols
                )));
            }
        }
        let len = self.full.len();
        if pyr.highpass.data.len() != len || pyr.lowpass.data.len() != len {
            return Err(Error::ShapeMismatch("residual shape differs from padded frame".into()));
        }
        Ok(())
    }

    /// Reconstruct the (unpadded, unclamped) luma plane.
    pub fn synthesize(&self, pyr: &Pyramid) -> Result<Plane> {
        self.check_pyramid(pyr)?;
        let n = self.full.len() as f64;
        let mut acc = vec![Complex64::new(0.0, 0.0); self.full.len()];

        // Per-band spectra are reduced to their tap contributions in parallel
        // and summed in band order so the result is independent of threading.
        let contributions: Vec<Vec<Complex64>> = pyr
            .bands
            .par_iter()
            .zip(&self.filters)
            .map(|(band, f)| {
                let mut buf = band.coeffs.clone();
                self.octave_ffts[f.octave].forward(&mut buf);
                let scale = n / f.info.len() as f64;
                f.taps.iter().map(|t| buf[t.crop as usize] * (t.weight * scale)).collect()
            })
            .collect();
        for (values, f) in contributions.iter().zip(&self.filters) {
            for (t, v) in f.taps.iter().zip(values) {
                acc[t.full as usize] += v;
            }
        }

        for (grid, mask) in [
            (&pyr.highpass, &self.highpass_mask),
            (&pyr.lowpass, &self.lowpass_mask),
        ] {
            let mut buf: Vec<Complex64> = grid.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            self.full.forward(&mut buf);
            for ((a, x), m) in acc.iter_mut().zip(&buf).zip(mask.iter()) {
                *a += x * m;
            }
        }

        self.full.inverse(&mut acc);
        let s = &self.spec;
        Ok(Plane::from_fn(s.width, s.height, |x, y| {
            (acc[(y + s.pad_top) * s.padded_width + x + s.pad_left].re / n) as f32
        }))
    }

    /// Effective end-to-end gain at every frequency bin of the padded grid:
    /// `h0^2 + l^2 + sum_b (M_b(w)^2 + M_b(-w)^2) / 2`.
    pub fn tiling_response(&self) -> Vec<f64> {
        let (ph, pw) = (self.spec.padded_height, self.spec.padded_width);
        let mut acc: Vec<f64> = self
            .highpass_mask
            .iter()
            .zip(&self.lowpass_mask)
            .map(|(h, l)| h * h + l * l)
            .collect();
        for f in &self.filters {
            for t in &f.taps {
                let full = t.full as usize;
                let (ry, rx) = (full / pw, full % pw);
                let neg = ((ph - ry) % ph) * pw + (pw - rx) % pw;
                let w2 = 0.5 * t.weight * t.weight;
                acc[full] += w2;
                acc[neg] += w2;
            }
        }
        acc
    }
}

/// Convenience wrapper building the filter bank on every call.
pub fn analyze(frame: &Frame, spec: &PyramidSpec) -> Result<Pyramid> {
    SteerablePyramid::new(spec.clone()).analyze(frame)
}

pub fn synthesize(pyr: &Pyramid, spec: &PyramidSpec) -> Result<Plane> {
    SteerablePyramid::new(spec.clone()).synthesize(pyr)
}

/// Write amplitude and phase visualizations of every band to `dir`.
pub fn dump_pyramid(pyr: &Pyramid, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for band in &pyr.bands {
        let BandInfo {
            scale,
            orientation,
            rows,
            cols,
        } = band.info;
        let peak = band.coeffs.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        let amp: Vec<u8> = band
            .coeffs
            .iter()
            .map(|c| quantize(if peak > 0.0 { (c.norm() / peak) as f32 } else { 0.0 }))
            .collect();
        let phase: Vec<u8> = band
            .coeffs
            .iter()
            .map(|c| quantize(((c.arg() + PI) / (2.0 * PI)) as f32))
            .collect();
        for (kind, bytes) in [("amp", amp), ("phase", phase)] {
            let path = dir.join(format!("band_s{scale:02}_o{orientation:02}_{kind}.png"));
            let img: GrayImage =
                ImageBuffer::from_raw(cols as u32, rows as u32, bytes).expect("band buffer sized from info");
            img.save(&path).map_err(|e| Error::Encode {
                index: 0,
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
    }
    Ok(())
}
