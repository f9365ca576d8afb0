//! Tool-motion artefact suppression: a one-cycle template of jerk responses
//! per coefficient and the comparator gate built from it.
//!
//! ## Template sidecar format
//!
//! Little-endian throughout:
//!
//! | field            | type          |
//! |------------------|---------------|
//! | magic `b"TMSF"`  | 4 bytes       |
//! | version (= 1)    | u32           |
//! | period `P`       | u32           |
//! | start frame      | u64           |
//! | band count `B`   | u32           |
//! | per band: len    | u32 each      |
//! | per band: `TL`   | `P * len` f32, slot-major (all coefficients of slot 0, then slot 1, ...) |
//! | per band: `R`    | `len` f32     |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Floor on the half range so static coefficients keep a non-degenerate band.
pub const EPSILON_R: f64 = 1e-6;

const MAGIC: &[u8; 4] = b"TMSF";
const VERSION: u32 = 1;

/// Cardiac period in whole frames, `round(fps * 60 / bpm)`.
pub fn period_frames(fps: f64, bpm: f64) -> Result<usize> {
    if !(fps > 0.0 && bpm > 0.0 && fps.is_finite() && bpm.is_finite()) {
        return Err(Error::Config(format!(
            "fps and bpm must be positive, got {fps} and {bpm}"
        )));
    }
    let p = (fps * 60.0 / bpm).round();
    if p < 1.0 {
        return Err(Error::PeriodTooShort);
    }
    Ok(p as usize)
}

/// Half of the max-min spread, floored at [`EPSILON_R`].
pub fn half_range<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return EPSILON_R;
    }
    (0.5 * (hi - lo)).max(EPSILON_R)
}

/// Comparator switch: open iff `reference - beta*R < d < reference + beta*R`.
#[inline]
pub fn gate(d: f64, reference: f64, half_range: f64, beta: f64) -> bool {
    let width = beta * half_range;
    d < reference + width && d > reference - width
}

/// Recording of `P` jerk responses per coefficient.
#[derive(Clone, Debug)]
pub struct TemplateCapture {
    period: usize,
    start_frame: usize,
    layout: Vec<usize>,
    samples: Vec<Vec<f32>>,
    recorded: usize,
}

impl TemplateCapture {
    /// Start recording at output frame `start_frame`; `layout` holds the
    /// coefficient count of each band.
    pub fn begin(period: usize, start_frame: usize, layout: Vec<usize>) -> Result<Self> {
        if period == 0 {
            return Err(Error::PeriodTooShort);
        }
        let samples = layout.iter().map(|&n| Vec::with_capacity(period * n)).collect();
        Ok(Self {
            period,
            start_frame,
            layout,
            samples,
            recorded: 0,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn start_frame(&self) -> usize {
        self.start_frame
    }

    pub fn recorded(&self) -> usize {
        self.recorded
    }

    pub fn is_complete(&self) -> bool {
        self.recorded == self.period
    }

    /// Discard partial data and restart at `start_frame`.
    pub fn restart(&mut self, start_frame: usize) {
        if self.recorded > 0 && !self.is_complete() {
            log::warn!(
                "template capture restarted at frame {start_frame}; discarding {} of {} samples",
                self.recorded,
                self.period
            );
        }
        self.samples.iter_mut().for_each(Vec::clear);
        self.recorded = 0;
        self.start_frame = start_frame;
    }

    /// Record one frame of jerk responses (one slice per band). Returns
    /// `true` once the template is full; further calls are ignored.
    pub fn record<S: AsRef<[f32]>>(&mut self, responses: &[S]) -> Result<bool> {
        if self.is_complete() {
            return Ok(true);
        }
        if responses.len() != self.layout.len() {
            return Err(Error::ShapeMismatch(format!(
                "template expects {} bands, got {}",
                self.layout.len(),
                responses.len()
            )));
        }
        for (band, (d, &n)) in responses.iter().zip(&self.layout).enumerate() {
            if d.as_ref().len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "band {band}: template expects {n} coefficients, got {}",
                    d.as_ref().len()
                )));
            }
        }
        for (store, d) in self.samples.iter_mut().zip(responses) {
            store.extend_from_slice(d.as_ref());
        }
        self.recorded += 1;
        Ok(self.is_complete())
    }

    pub fn finalize(self) -> Result<TmasfTemplate> {
        if !self.is_complete() {
            return Err(Error::TemplateIncomplete {
                recorded: self.recorded,
                period: self.period,
            });
        }
        let period = self.period;
        let bands = self
            .samples
            .into_iter()
            .zip(&self.layout)
            .map(|(values, &n)| {
                let half_range = (0..n)
                    .map(|i| half_range((0..period).map(|p| values[p * n + i] as f64)) as f32)
                    .collect();
                BandTemplate { values, half_range }
            })
            .collect();
        Ok(TmasfTemplate {
            period,
            start_frame: self.start_frame,
            bands,
        })
    }
}

/// `begin_capture(P)` for a layout of band sizes, starting at `start_frame`.
pub fn begin_capture(period: usize, start_frame: usize, layout: Vec<usize>) -> Result<TemplateCapture> {
    TemplateCapture::begin(period, start_frame, layout)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandTemplate {
    /// `P * len` stored responses, slot-major.
    pub values: Vec<f32>,
    pub half_range: Vec<f32>,
}

impl BandTemplate {
    pub fn len(&self) -> usize {
        self.half_range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.half_range.is_empty()
    }

    pub fn slot(&self, idx: usize) -> &[f32] {
        let n = self.len();
        &self.values[idx * n..(idx + 1) * n]
    }
}

/// Frozen template; immutable after [`TemplateCapture::finalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct TmasfTemplate {
    period: usize,
    start_frame: usize,
    bands: Vec<BandTemplate>,
}

/// Per-band open/closed state of every coefficient for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMask {
    pub bands: Vec<Vec<bool>>,
}

impl GateMask {
    pub fn open_fraction(&self) -> Vec<f64> {
        self.bands
            .iter()
            .map(|b| {
                if b.is_empty() {
                    1.0
                } else {
                    b.iter().filter(|&&x| x).count() as f64 / b.len() as f64
                }
            })
            .collect()
    }
}

impl TmasfTemplate {
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn start_frame(&self) -> usize {
        self.start_frame
    }

    pub fn bands(&self) -> &[BandTemplate] {
        &self.bands
    }

    pub fn layout(&self) -> Vec<usize> {
        self.bands.iter().map(BandTemplate::len).collect()
    }

    /// Template slot for output frame `t`: `(t - start) mod P`.
    pub fn slot_for(&self, t: usize) -> Result<usize> {
        if t < self.start_frame {
            return Err(Error::Config(format!(
                "frame {t} precedes template start {}",
                self.start_frame
            )));
        }
        Ok((t - self.start_frame) % self.period)
    }

    pub fn gate(&self, band: usize, coeff: usize, d: f64, t: usize, beta: f64) -> Result<bool> {
        let idx = self.slot_for(t)?;
        let b = &self.bands[band];
        Ok(gate(d, b.slot(idx)[coeff] as f64, b.half_range[coeff] as f64, beta))
    }

    /// Gate every coefficient of one band.
    pub fn gate_band(&self, band: usize, d: &[f32], t: usize, beta: f64, out: &mut Vec<bool>) -> Result<()> {
        let idx = self.slot_for(t)?;
        let b = &self.bands[band];
        if d.len() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "band {band}: {} responses for {} template coefficients",
                d.len(),
                b.len()
            )));
        }
        out.clear();
        out.extend(
            d.iter()
                .zip(b.slot(idx))
                .zip(&b.half_range)
                .map(|((&d, &tl), &r)| gate(d as f64, tl as f64, r as f64, beta)),
        );
        Ok(())
    }

    pub fn gate_frame<S: AsRef<[f32]>>(&self, responses: &[S], t: usize, beta: f64) -> Result<GateMask> {
        if responses.len() != self.bands.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} response bands for {} template bands",
                responses.len(),
                self.bands.len()
            )));
        }
        let mut bands = Vec::with_capacity(self.bands.len());
        for (i, d) in responses.iter().enumerate() {
            let mut mask = Vec::new();
            self.gate_band(i, d.as_ref(), t, beta, &mut mask)?;
            bands.push(mask);
        }
        Ok(GateMask { bands })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.period as u32).to_le_bytes())?;
        w.write_all(&(self.start_frame as u64).to_le_bytes())?;
        w.write_all(&(self.bands.len() as u32).to_le_bytes())?;
        for b in &self.bands {
            w.write_all(&(b.len() as u32).to_le_bytes())?;
        }
        for b in &self.bands {
            for v in b.values.iter().chain(&b.half_range) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::format("template", m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_field = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u32_field(&mut r)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let period = u32_field(&mut r)? as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let start_frame = u64::from_le_bytes(b8) as usize;
        let n_bands = u32_field(&mut r)? as usize;
        if period == 0 {
            return Err(bad("zero period"));
        }
        let mut lens = Vec::with_capacity(n_bands);
        for _ in 0..n_bands {
            lens.push(u32_field(&mut r)? as usize);
        }
        let mut read_f32s = |count: usize| -> Result<Vec<f32>> {
            let mut bytes = vec![0u8; count * 4];
            r.read_exact(&mut bytes).map_err(|_| bad("truncated payload"))?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        };
        let mut bands = Vec::with_capacity(n_bands);
        for n in lens {
            let values = read_f32s(period * n)?;
            let half_range = read_f32s(n)?;
            bands.push(BandTemplate { values, half_range });
        }
        Ok(Self {
            period,
            start_frame,
            bands,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
