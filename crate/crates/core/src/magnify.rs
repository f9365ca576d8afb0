//! Streaming magnification pipeline: analyze, track phase, jerk-filter,
//! optionally gate, rotate phases and synthesize.
//!
//! Output frame `t` is emitted once input frame `t + radius` has arrived.
//! Frames without a valid jerk response (the first and last `radius`
//! frames), and frames consumed by template capture in `tmasf` mode, are
//! passed through unmodified and flagged with their [`FrameStatus`].
//!
//! Several `(mode, beta)` variants can share one analysis pass; each variant
//! gets its own synthesized output stream.

use std::collections::VecDeque;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::{Frame, VideoMeta};
use crate::pyramid::{make_spec, Band, BandInfo, Pyramid, RealGrid, SteerablePyramid};
use crate::temporal_filter::{
    arg_half_open, bpm_to_hz, jerk_response, wrap_phase, JerkKernel, PhaseState, AMPLITUDE_FLOOR,
    DEFAULT_RADIUS_MULT,
};
use crate::tmasf::{period_frames, GateMask, TemplateCapture, TmasfTemplate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Ungated jerk magnification.
    Vmm,
    /// Template-gated magnification.
    Tmasf,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Vmm => "vmm",
            Mode::Tmasf => "tmasf",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vmm" => Ok(Mode::Vmm),
            "tmasf" => Ok(Mode::Tmasf),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected vmm or tmasf)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnifyConfig {
    pub alpha: f64,
    pub beta: f64,
    pub mode: Mode,
    pub bpm: f64,
    /// Output frames to skip after the kernel is ready before template capture starts.
    pub init_frames: usize,
    pub n_orientations: usize,
    pub octave_fraction: usize,
    pub radius_mult: f64,
}

impl Default for MagnifyConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 3.0,
            mode: Mode::Tmasf,
            bpm: 60.0,
            init_frames: 0,
            n_orientations: crate::pyramid::DEFAULT_ORIENTATIONS,
            octave_fraction: crate::pyramid::DEFAULT_OCTAVE_FRACTION,
            radius_mult: DEFAULT_RADIUS_MULT,
        }
    }
}

impl MagnifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0) || self.beta.is_nan() {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.bpm.is_finite() && self.bpm > 0.0) {
            return Err(Error::Config(format!("bpm must be > 0, got {}", self.bpm)));
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        bpm_to_hz(self.bpm)
    }

    pub fn variant(&self) -> Variant {
        Variant {
            mode: self.mode,
            beta: self.beta,
        }
    }
}

/// One output stream of a shared analysis pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub mode: Mode,
    pub beta: f64,
}

impl Variant {
    pub fn vmm() -> Self {
        Self {
            mode: Mode::Vmm,
            beta: f64::INFINITY,
        }
    }

    pub fn tmasf(beta: f64) -> Self {
        Self {
            mode: Mode::Tmasf,
            beta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    /// Jerk response not yet available (or template capture not yet started).
    WarmUp,
    /// Frame consumed by template capture.
    TemplateCapture,
    Magnified,
    /// Trailing frames with no future samples for the kernel.
    Flush,
}

impl FrameStatus {
    pub fn is_passthrough(self) -> bool {
        self != FrameStatus::Magnified
    }
}

#[derive(Clone, Debug)]
pub struct OutputFrame {
    pub frame: Frame,
    pub status: FrameStatus,
    /// Open-gate fraction per band for gated frames.
    pub gate_open_fraction: Option<Vec<f64>>,
    /// Coefficients handed to synthesis, when inspection is enabled.
    pub inspection: Option<Inspection>,
}

/// Polar coefficients of one band.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarBand {
    pub amplitude: Vec<f32>,
    pub phase: Vec<f32>,
}

/// Everything a magnified frame was synthesized from.
#[derive(Clone, Debug)]
pub struct Inspection {
    pub bands: Vec<PolarBand>,
    pub highpass: RealGrid,
    pub lowpass: RealGrid,
    pub gates: Option<GateMask>,
}

/// Ring of wrapped phase increments for one band, slot-major.
struct BandHistory {
    len: usize,
    increments: Vec<f32>,
    /// Last phase above the amplitude floor; NaN until one is seen.
    previous: Vec<f64>,
}

/// Polar coefficients of a frame waiting for its jerk response.
struct Delayed {
    frame: Frame,
    amplitude: Vec<Vec<f32>>,
    phase: Vec<Vec<f32>>,
    highpass: RealGrid,
    lowpass: RealGrid,
}

enum TemplateState {
    NotNeeded,
    Capturing(TemplateCapture),
    Ready { template: TmasfTemplate, from: usize },
}

pub struct Magnifier {
    meta: VideoMeta,
    cfg: MagnifyConfig,
    variants: Vec<Variant>,
    pyramid: SteerablePyramid,
    kernel: JerkKernel,
    increment_weights: Vec<f64>,
    infos: Vec<BandInfo>,
    history: Vec<BandHistory>,
    slots: usize,
    pushed: usize,
    delay: VecDeque<Delayed>,
    period: usize,
    capture_start: usize,
    template: TemplateState,
    next_output: usize,
    inspect: bool,
}

impl Magnifier {
    pub fn new(meta: VideoMeta, cfg: MagnifyConfig) -> Result<Self> {
        let variant = cfg.variant();
        Self::with_variants(meta, cfg, &[variant])
    }

    /// Share one analysis pass between several output variants. `cfg.mode`
    /// and `cfg.beta` are ignored in favour of `variants`.
    pub fn with_variants(meta: VideoMeta, cfg: MagnifyConfig, variants: &[Variant]) -> Result<Self> {
        meta.validate()?;
        cfg.validate()?;
        if variants.is_empty() {
            return Err(Error::Config("at least one output variant is required".into()));
        }
        for v in variants {
            if v.mode == Mode::Tmasf && !(v.beta > 0.0) {
                return Err(Error::Config(format!("beta must be > 0, got {}", v.beta)));
            }
        }
        let kernel = JerkKernel::new(meta.fps, cfg.omega(), cfg.radius_mult)?;
        let period = period_frames(meta.fps, cfg.bpm)?;
        let spec = make_spec(meta.width, meta.height, cfg.n_orientations, cfg.octave_fraction)?;
        let pyramid = SteerablePyramid::new(spec);
        let infos = pyramid.spec().band_infos();
        let slots = kernel.len() - 1;
        let history = infos
            .iter()
            .map(|info| BandHistory {
                len: info.len(),
                increments: vec![0.0; slots * info.len()],
                previous: vec![f64::NAN; info.len()],
            })
            .collect();
        let radius = kernel.radius;
        let capture_start = radius + cfg.init_frames;
        let needs_template = variants.iter().any(|v| v.mode == Mode::Tmasf);
        let template = if needs_template {
            let required = capture_start + period + radius;
            if meta.frame_count < required {
                return Err(Error::TemplateIncomplete {
                    recorded: meta.frame_count.saturating_sub(capture_start + radius).min(period),
                    period,
                });
            }
            TemplateState::Capturing(TemplateCapture::begin(
                period,
                capture_start,
                infos.iter().map(BandInfo::len).collect(),
            )?)
        } else {
            TemplateState::NotNeeded
        };
        Ok(Self {
            meta,
            increment_weights: kernel.increment_weights(),
            cfg,
            variants: variants.to_vec(),
            pyramid,
            kernel,
            infos,
            history,
            slots,
            pushed: 0,
            delay: VecDeque::new(),
            period,
            capture_start,
            template,
            next_output: 0,
            inspect: false,
        })
    }

    /// Attach an [`Inspection`] to every magnified output frame.
    pub fn set_inspection(&mut self, enabled: bool) {
        self.inspect = enabled;
    }

    pub fn latency(&self) -> usize {
        self.kernel.radius
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn kernel(&self) -> &JerkKernel {
        &self.kernel
    }

    pub fn pyramid(&self) -> &SteerablePyramid {
        &self.pyramid
    }

    pub fn variants(&self) -> &[Variant] {
        &self.variants
    }

    pub fn config(&self) -> &MagnifyConfig {
        &self.cfg
    }

    /// First output frame fed to template capture.
    pub fn capture_start(&self) -> usize {
        self.capture_start
    }

    pub fn template(&self) -> Option<&TmasfTemplate> {
        match &self.template {
            TemplateState::Ready { template, .. } => Some(template),
            _ => None,
        }
    }

    /// Resume with a previously captured template instead of capturing anew.
    pub fn use_template(&mut self, template: TmasfTemplate) -> Result<()> {
        let layout: Vec<usize> = self.infos.iter().map(BandInfo::len).collect();
        if template.layout() != layout {
            return Err(Error::ShapeMismatch(
                "template layout does not match this pyramid".into(),
            ));
        }
        if template.period() != self.period {
            return Err(Error::Config(format!(
                "template period {} differs from configured period {}",
                template.period(),
                self.period
            )));
        }
        let from = template.start_frame();
        self.template = TemplateState::Ready { template, from };
        Ok(())
    }

    /// Feed the next input frame. Returns one output per variant once the
    /// delay line is full.
    pub fn push(&mut self, frame: Frame) -> Result<Option<Vec<OutputFrame>>> {
        if frame.width() != self.meta.width || frame.height() != self.meta.height {
            return Err(Error::DimensionMismatch {
                index: self.pushed,
                width: self.meta.width,
                height: self.meta.height,
                got_width: frame.width(),
                got_height: frame.height(),
            });
        }
        let pyr = self.pyramid.analyze(&frame)?;
        let write_slot = self.pushed.checked_sub(1).map(|k| k % self.slots);
        let (amplitude, phase): (Vec<Vec<f32>>, Vec<Vec<f32>>) = self
            .history
            .par_iter_mut()
            .zip(pyr.bands.par_iter())
            .map(|(hist, band)| track_band(hist, band, write_slot))
            .unzip();
        self.pushed += 1;
        self.delay.push_back(Delayed {
            frame,
            amplitude,
            phase,
            highpass: pyr.highpass,
            lowpass: pyr.lowpass,
        });
        if self.delay.len() <= self.kernel.radius {
            return Ok(None);
        }
        let delayed = self.delay.pop_front().expect("delay line non-empty");
        let responses = (self.pushed > self.slots).then(|| self.jerk_responses());
        let out = self.emit(delayed, responses, FrameStatus::WarmUp)?;
        Ok(Some(out))
    }

    /// Flush the trailing frames. Fails if a gated variant never completed
    /// its template.
    pub fn finish(&mut self) -> Result<Vec<Vec<OutputFrame>>> {
        if let TemplateState::Capturing(cap) = &self.template {
            return Err(Error::TemplateIncomplete {
                recorded: cap.recorded(),
                period: cap.period(),
            });
        }
        let mut out = Vec::with_capacity(self.delay.len());
        while let Some(delayed) = self.delay.pop_front() {
            out.push(self.emit(delayed, None, FrameStatus::Flush)?);
        }
        Ok(out)
    }

    fn jerk_responses(&self) -> Vec<Vec<f32>> {
        let oldest = (self.pushed - 1) % self.slots;
        let slots = self.slots;
        let weights = &self.increment_weights;
        self.history
            .par_iter()
            .map(|hist| {
                let n = hist.len;
                let mut acc = vec![0.0f64; n];
                for (j, &c) in weights.iter().enumerate() {
                    let slot = (oldest + j) % slots;
                    let row = &hist.increments[slot * n..(slot + 1) * n];
                    for (a, &x) in acc.iter_mut().zip(row) {
                        *a += c * x as f64;
                    }
                }
                acc.into_iter().map(|v| v as f32).collect()
            })
            .collect()
    }

    fn emit(
        &mut self,
        delayed: Delayed,
        responses: Option<Vec<Vec<f32>>>,
        idle: FrameStatus,
    ) -> Result<Vec<OutputFrame>> {
        let t = self.next_output;
        self.next_output += 1;
        let passthrough = |status| OutputFrame {
            frame: Frame {
                index: t,
                ..delayed.frame.clone()
            },
            status,
            gate_open_fraction: None,
            inspection: None,
        };
        let Some(d) = responses else {
            return Ok(self.variants.iter().map(|_| passthrough(idle)).collect());
        };

        // Template bookkeeping happens before gating so the frame that
        // completes the capture is itself still a capture frame.
        let mut captured_now = false;
        if let TemplateState::Capturing(cap) = &mut self.template {
            if t >= self.capture_start {
                captured_now = true;
                if cap.record(&d)? {
                    let TemplateState::Capturing(cap) =
                        std::mem::replace(&mut self.template, TemplateState::NotNeeded)
                    else {
                        unreachable!()
                    };
                    let from = cap.start_frame() + cap.period();
                    self.template = TemplateState::Ready {
                        template: cap.finalize()?,
                        from,
                    };
                }
            }
        }

        let mut out = Vec::with_capacity(self.variants.len());
        for v in self.variants.clone() {
            match v.mode {
                Mode::Vmm => out.push(self.magnify_frame(&delayed, &d, None, t)?),
                Mode::Tmasf => match &self.template {
                    TemplateState::Ready { template, from } if t >= *from => {
                        let mask = template.gate_frame(&d, t, v.beta)?;
                        out.push(self.magnify_frame(&delayed, &d, Some(mask), t)?);
                    }
                    _ => out.push(passthrough(if captured_now || t >= self.capture_start {
                        FrameStatus::TemplateCapture
                    } else {
                        FrameStatus::WarmUp
                    })),
                },
            }
        }
        Ok(out)
    }

    fn magnify_frame(&self, delayed: &Delayed, d: &[Vec<f32>], mask: Option<GateMask>, t: usize) -> Result<OutputFrame> {
        let bands = self.rotate_phases(delayed, d, mask.as_ref().map(|m| &m.bands[..]));
        let pyr = Pyramid {
            bands: to_complex(&bands, &self.infos),
            highpass: delayed.highpass.clone(),
            lowpass: delayed.lowpass.clone(),
        };
        let luma = self.pyramid.synthesize(&pyr)?;
        let gate_open_fraction = mask.as_ref().map(GateMask::open_fraction);
        let inspection = self.inspect.then_some(Inspection {
            bands,
            highpass: pyr.highpass,
            lowpass: pyr.lowpass,
            gates: mask,
        });
        Ok(OutputFrame {
            frame: Frame {
                luma,
                chroma: delayed.frame.chroma.clone(),
                index: t,
            },
            status: FrameStatus::Magnified,
            gate_open_fraction,
            inspection,
        })
    }

    /// Amplitude untouched, phase `wrap(phi + alpha*chi*D)`.
    fn rotate_phases(&self, delayed: &Delayed, d: &[Vec<f32>], gates: Option<&[Vec<bool>]>) -> Vec<PolarBand> {
        let alpha = self.cfg.alpha;
        (0..self.infos.len())
            .into_par_iter()
            .map(|b| {
                let phase = delayed.phase[b]
                    .iter()
                    .zip(&d[b])
                    .enumerate()
                    .map(|(i, (&phi, &resp))| {
                        let open = gates.is_none_or(|g| g[b][i]);
                        if open {
                            wrap_phase(phi as f64 + alpha * resp as f64) as f32
                        } else {
                            phi
                        }
                    })
                    .collect();
                PolarBand {
                    amplitude: delayed.amplitude[b].clone(),
                    phase,
                }
            })
            .collect()
    }
}

fn to_complex(bands: &[PolarBand], infos: &[BandInfo]) -> Vec<Band> {
    bands
        .par_iter()
        .zip(infos.par_iter())
        .map(|(p, info)| Band {
            info: *info,
            coeffs: p
                .amplitude
                .iter()
                .zip(&p.phase)
                .map(|(&a, &psi)| Complex64::from_polar(a as f64, psi as f64))
                .collect(),
        })
        .collect()
}

fn track_band(hist: &mut BandHistory, band: &Band, write_slot: Option<usize>) -> (Vec<f32>, Vec<f32>) {
    let n = hist.len;
    let mut amplitude = Vec::with_capacity(n);
    let mut phase = Vec::with_capacity(n);
    let slot = write_slot.map(|s| &mut hist.increments[s * n..(s + 1) * n]);
    let mut slot = slot;
    for (i, c) in band.coeffs.iter().enumerate() {
        let a = c.norm();
        let phi = arg_half_open(*c);
        amplitude.push(a as f32);
        phase.push(phi as f32);
        let prev = hist.previous[i];
        let inc = if a < AMPLITUDE_FLOOR {
            0.0
        } else {
            hist.previous[i] = phi;
            if prev.is_nan() {
                0.0
            } else {
                wrap_phase(phi - prev)
            }
        };
        if let Some(row) = slot.as_deref_mut() {
            row[i] = inc as f32;
        }
    }
    (amplitude, phase)
}

/// Iterator adaptor over a frame stream for a single variant.
pub struct MagnifyStream<I> {
    frames: I,
    magnifier: Magnifier,
    pending: VecDeque<OutputFrame>,
    done: bool,
}

impl<I> MagnifyStream<I> {
    pub fn magnifier(&self) -> &Magnifier {
        &self.magnifier
    }
}

pub fn magnify_stream<I>(frames: I, meta: VideoMeta, cfg: MagnifyConfig) -> Result<MagnifyStream<I::IntoIter>>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    Ok(MagnifyStream {
        frames: frames.into_iter(),
        magnifier: Magnifier::new(meta, cfg)?,
        pending: VecDeque::new(),
        done: false,
    })
}

impl<I> Iterator for MagnifyStream<I>
where
    I: Iterator<Item = Result<Frame>>,
{
    type Item = Result<OutputFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(f) = self.pending.pop_front() {
                return Some(Ok(f));
            }
            if self.done {
                return None;
            }
            match self.frames.next() {
                Some(Ok(frame)) => match self.magnifier.push(frame) {
                    Ok(Some(mut outs)) => self.pending.push_back(outs.swap_remove(0)),
                    Ok(None) => {}
                    Err(e) => {
                        self.done = true;
                        return Some(Err(e));
                    }
                },
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                None => {
                    self.done = true;
                    match self.magnifier.finish() {
                        Ok(rest) => self.pending.extend(rest.into_iter().map(|mut v| v.swap_remove(0))),
                        Err(e) => return Some(Err(e)),
                    }
                }
            }
        }
    }
}

/// Writes `frame,band,open_fraction` rows.
pub struct GateCsvWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl GateCsvWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "frame,band,open_fraction").map_err(|e| Error::io(&path, e))?;
        Ok(Self { out, path })
    }

    pub fn write(&mut self, frame: usize, fractions: &[f64]) -> Result<()> {
        for (band, f) in fractions.iter().enumerate() {
            writeln!(self.out, "{frame},{band},{f}").map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// One timestep of the single-coefficient demonstration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemoRow {
    pub t: usize,
    pub phi: f64,
    pub d: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub chi: Option<bool>,
    pub amplified_gated: f64,
    pub amplified_ungated: f64,
}

/// Run the pipeline on a single phase series (as read from one coefficient)
/// and tabulate input, jerk response, comparator bounds, gate and both
/// amplified outputs.
pub fn run_1d_demo(profile: &[f64], fps: f64, cfg: &MagnifyConfig) -> Result<Vec<DemoRow>> {
    cfg.validate()?;
    let kernel = JerkKernel::new(fps, cfg.omega(), cfg.radius_mult)?;
    let period = period_frames(fps, cfg.bpm)?;
    let r = kernel.radius;
    let warm_up = kernel.len() + cfg.init_frames;
    if profile.len() < warm_up + 2 * period {
        return Err(Error::Config(format!(
            "profile of {} samples is shorter than warm-up ({warm_up}) plus two periods ({period} each)",
            profile.len()
        )));
    }

    let mut state = PhaseState::new(&kernel);
    let mut responses = vec![None; profile.len()];
    for (n, &phi) in profile.iter().enumerate() {
        state.push_phase(Complex64::from_polar(1.0, phi));
        if let Some(d) = jerk_response(&state, &kernel) {
            responses[n - r] = Some(d);
        }
    }

    let start = r + cfg.init_frames;
    let mut capture = TemplateCapture::begin(period, start, vec![1])?;
    for d in &responses[start..start + period] {
        let d = d.expect("responses available after warm-up");
        capture.record(&[[d as f32]])?;
    }
    let template = capture.finalize()?;
    let band = &template.bands()[0];
    let gated_from = start + period;

    Ok(profile
        .iter()
        .enumerate()
        .map(|(t, &phi)| {
            let d = responses[t].map(|d| d as f32 as f64);
            let (lower, upper, chi) = match d {
                Some(d) if t >= gated_from => {
                    let slot = template.slot_for(t).expect("t after template start");
                    let tl = band.slot(slot)[0] as f64;
                    let width = cfg.beta * band.half_range[0] as f64;
                    (
                        Some(tl - width),
                        Some(tl + width),
                        Some(crate::tmasf::gate(d, tl, band.half_range[0] as f64, cfg.beta)),
                    )
                }
                _ => (None, None, None),
            };
            let boost = d.map_or(0.0, |d| cfg.alpha * d);
            DemoRow {
                t,
                phi,
                d,
                lower,
                upper,
                chi,
                amplified_gated: phi + if chi == Some(true) { boost } else { 0.0 },
                amplified_ungated: phi + boost,
            }
        })
        .collect())
}

pub fn write_demo_csv<W: Write>(rows: &[DemoRow], mut w: W) -> std::io::Result<()> {
    fn opt(v: Option<f64>) -> String {
        v.map(|v| v.to_string()).unwrap_or_default()
    }
    writeln!(w, "t,phi,d,lower,upper,chi,amplified_gated,amplified_ungated")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.t,
            r.phi,
            opt(r.d),
            opt(r.lower),
            opt(r.upper),
            r.chi.map(|c| u8::from(c).to_string()).unwrap_or_default(),
            r.amplified_gated,
            r.amplified_ungated
        )?;
    }
    w.flush()
}
