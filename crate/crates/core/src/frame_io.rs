//! Frame model and lossless video interchange.
//!
//! Two on-disk layouts are supported:
//!
//! * **PNG sequence**: a directory of `frame_%06d.png` files with contiguous
//!   indices. An optional `meta.txt` sidecar holds the same `W H FPS N` line
//!   as the raw header. Grayscale PNGs load as luma only; RGB PNGs are split
//!   into BT.601 full-range luma and two chroma planes.
//! * **Raw planar**: a file whose first line is the ASCII header `W H FPS N`
//!   (whitespace separated, terminated by `\n`; trailing spaces allowed),
//!   followed by `N` frames. Each frame is `W*H` luma bytes (row-major)
//!   followed by the Cb plane and then the Cr plane, each
//!   `ceil(W/2)*ceil(H/2)` bytes. Chroma is 2x2 box-averaged on write and
//!   replicated on read.
//!
//! All samples are held in memory as `f32` in `[0, 1]` after load. Output
//! values are clamped and quantized to 8 bits only at write time.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum frame side accepted by the pyramid.
pub const MIN_FRAME_SIDE: usize = 16;

/// Name of the sidecar written into PNG sequence directories.
pub const META_SIDECAR: &str = "meta.txt";

/// Width of the zero-padded frame-count field in the raw header, so the
/// header can be patched in place once the stream is finished.
const RAW_COUNT_FIELD: usize = 10;

/// A single-channel image of `f32` samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "plane {}x{} needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear sample at a sub-pixel position. Coordinates are clamped to the
    /// plane.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if x + width > self.width || y + height > self.height || width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "crop {}x{}+{}+{} outside {}x{} plane",
                width, height, x, y, self.width, self.height
            )));
        }
        Ok(Self::from_fn(width, height, |cx, cy| self.get(x + cx, y + cy)))
    }

    /// Box-filter downscale by an integer factor. Trailing rows/columns that do
    /// not fill a whole box are dropped.
    pub fn downscale(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("scale factor must be at least 1".into()));
        }
        let width = self.width / factor;
        let height = self.height / factor;
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "scale factor {} too large for {}x{} plane",
                factor, self.width, self.height
            )));
        }
        let norm = 1.0 / (factor * factor) as f32;
        Ok(Self::from_fn(width, height, |cx, cy| {
            let mut acc = 0.0f32;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += self.get(cx * factor + dx, cy * factor + dy);
                }
            }
            acc * norm
        }))
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// One video frame: luma plus optional pass-through chroma (Cb, Cr).
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub luma: Plane,
    pub chroma: Option<[Plane; 2]>,
    pub index: usize,
}

impl Frame {
    pub fn new(luma: Plane, index: usize) -> Self {
        Self {
            luma,
            chroma: None,
            index,
        }
    }

    pub fn with_chroma(luma: Plane, chroma: [Plane; 2], index: usize) -> Result<Self> {
        if !chroma.iter().all(|c| c.same_shape(&luma)) {
            return Err(Error::ShapeMismatch(
                "chroma planes must match the luma plane".into(),
            ));
        }
        Ok(Self {
            luma,
            chroma: Some(chroma),
            index,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.luma.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.luma.height
    }

    /// Build a frame from interleaved 8-bit RGB.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8], index: usize) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "rgb buffer for {}x{} needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                rgb.len()
            )));
        }
        let mut luma = Plane::new(width, height);
        let mut cb = Plane::new(width, height);
        let mut cr = Plane::new(width, height);
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            let (y, u, v) = rgb_to_ycbcr(
                px[0] as f32 / 255.0,
                px[1] as f32 / 255.0,
                px[2] as f32 / 255.0,
            );
            luma.data[i] = y.clamp(0.0, 1.0);
            cb.data[i] = u;
            cr.data[i] = v;
        }
        Ok(Self {
            luma,
            chroma: Some([cb, cr]),
            index,
        })
    }

    /// Interleaved 8-bit RGB (or gray replicated into RGB when there is no chroma).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width() * self.height() * 3);
        match &self.chroma {
            Some([cb, cr]) => {
                for i in 0..self.luma.data.len() {
                    let (r, g, b) = ycbcr_to_rgb(self.luma.data[i], cb.data[i], cr.data[i]);
                    out.extend_from_slice(&[quantize(r), quantize(g), quantize(b)]);
                }
            }
            None => {
                for &y in &self.luma.data {
                    let q = quantize(y);
                    out.extend_from_slice(&[q, q, q]);
                }
            }
        }
        out
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        Ok(Self {
            luma: self.luma.crop(x, y, width, height)?,
            chroma: match &self.chroma {
                Some([cb, cr]) => Some([cb.crop(x, y, width, height)?, cr.crop(x, y, width, height)?]),
                None => None,
            },
            index: self.index,
        })
    }

    pub fn downscale(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            luma: self.luma.downscale(factor)?,
            chroma: match &self.chroma {
                Some([cb, cr]) => Some([cb.downscale(factor)?, cr.downscale(factor)?]),
                None => None,
            },
            index: self.index,
        })
    }
}

/// Stream-level metadata.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub fps: f64,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frame_count == 0 {
            return Err(Error::NoFrames);
        }
        if self.width < MIN_FRAME_SIDE || self.height < MIN_FRAME_SIDE {
            return Err(Error::TooSmall {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    fn header_line(&self) -> String {
        format!(
            "{} {} {} {:0width$}",
            self.width,
            self.height,
            self.fps,
            self.frame_count,
            width = RAW_COUNT_FIELD
        )
    }

    fn parse_header(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::format(
                "video header",
                format!("expected `W H FPS N`, got {:?}", line.trim_end()),
            ));
        }
        let bad = |what: &str| Error::format("video header", format!("bad {what} in {:?}", line.trim_end()));
        Ok(Self {
            width: fields[0].parse().map_err(|_| bad("width"))?,
            height: fields[1].parse().map_err(|_| bad("height"))?,
            fps: fields[2].parse().map_err(|_| bad("fps"))?,
            frame_count: fields[3].parse().map_err(|_| bad("frame count"))?,
        })
    }
}

/// BT.601 full-range RGB to (Y, Cb, Cr), all in `[0, 1]` with chroma centred on 0.5.
#[inline]
pub fn rgb_to_ycbcr(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 0.5 + (b - y) / 1.772;
    let cr = 0.5 + (r - y) / 1.402;
    (y, cb, cr)
}

#[inline]
pub fn ycbcr_to_rgb(y: f32, cb: f32, cr: f32) -> (f32, f32, f32) {
    let r = y + 1.402 * (cr - 0.5);
    let b = y + 1.772 * (cb - 0.5);
    let g = (y - 0.299 * r - 0.114 * b) / 0.587;
    (r, g, b)
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// On-disk layout of a frame sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoFormat {
    PngSequence,
    Raw,
}

impl VideoFormat {
    /// Paths with a `.raw` or `.yuv` extension are raw planar files; anything
    /// else is treated as a PNG sequence directory.
    pub fn detect(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("raw") || ext.eq_ignore_ascii_case("yuv") => {
                VideoFormat::Raw
            }
            _ => VideoFormat::PngSequence,
        }
    }
}

pub fn png_frame_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

fn parse_png_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

enum Source {
    Png { files: Vec<PathBuf> },
    Raw { reader: BufReader<File>, path: PathBuf },
}

/// Lazily decodes frames in index order. Only the frame being decoded is
/// resident.
pub struct FrameReader {
    meta: VideoMeta,
    source: Source,
    next: usize,
}

impl FrameReader {
    pub fn meta(&self) -> VideoMeta {
        self.meta
    }

    fn read_png(&self, path: &Path, index: usize) -> Result<Frame> {
        let decode = |message: String| Error::Decode {
            index,
            path: path.to_path_buf(),
            message,
        };
        let img = image::open(path).map_err(|e| decode(e.to_string()))?;
        let frame = decode_image(img, index);
        if frame.width() != self.meta.width || frame.height() != self.meta.height {
            return Err(Error::DimensionMismatch {
                index,
                width: self.meta.width,
                height: self.meta.height,
                got_width: frame.width(),
                got_height: frame.height(),
            });
        }
        Ok(frame)
    }

    fn read_raw(&mut self, index: usize) -> Result<Frame> {
        let VideoMeta { width, height, .. } = self.meta;
        let (cw, ch) = chroma_dims(width, height);
        let mut buf = vec![0u8; width * height + 2 * cw * ch];
        let Source::Raw { reader, path } = &mut self.source else {
            unreachable!("raw read on non-raw source")
        };
        reader.read_exact(&mut buf).map_err(|e| Error::Decode {
            index,
            path: path.clone(),
            message: format!("truncated raw frame: {e}"),
        })?;
        let luma = Plane::from_fn(width, height, |x, y| buf[y * width + x] as f32 / 255.0);
        let plane = |offset: usize| {
            Plane::from_fn(width, height, |x, y| {
                buf[offset + (y / 2) * cw + x / 2] as f32 / 255.0
            })
        };
        let cb = plane(width * height);
        let cr = plane(width * height + cw * ch);
        Frame::with_chroma(luma, [cb, cr], index)
    }
}

impl Iterator for FrameReader {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.meta.frame_count {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let frame = match &self.source {
            Source::Png { files } => {
                let path = files[index].clone();
                self.read_png(&path, index)
            }
            Source::Raw { .. } => self.read_raw(index),
        };
        if frame.is_err() {
            // Stop after the first hard error.
            self.next = self.meta.frame_count;
        }
        Some(frame)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.meta.frame_count - self.next.min(self.meta.frame_count);
        (left, Some(left))
    }
}

fn decode_image(img: DynamicImage, index: usize) -> Frame {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        Frame::from_rgb8(w, h, rgb.as_raw(), index).expect("rgb buffer sized by decoder")
    } else {
        let gray = img.to_luma16();
        let data = gray.as_raw().iter().map(|&v| v as f32 / 65535.0).collect();
        Frame::new(Plane::from_vec(w, h, data).expect("gray buffer sized by decoder"), index)
    }
}

fn chroma_dims(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(2), height.div_ceil(2))
}

fn read_sidecar(dir: &Path) -> Result<Option<VideoMeta>> {
    let path = dir.join(META_SIDECAR);
    match fs::read_to_string(&path) {
        Ok(text) => Ok(Some(VideoMeta::parse_header(
            text.lines().next().unwrap_or_default(),
        )?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Open a PNG sequence directory or raw planar file for streaming reads.
///
/// `fps_override` replaces the frame rate recorded in the header or sidecar;
/// a PNG directory without a sidecar requires it.
pub fn read_frame_sequence(path: impl AsRef<Path>, fps_override: Option<f64>) -> Result<FrameReader> {
    let path = path.as_ref();
    match VideoFormat::detect(path) {
        VideoFormat::Raw => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut reader = BufReader::new(file);
            let mut header = String::new();
            reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
            let mut meta = VideoMeta::parse_header(&header)?;
            if let Some(fps) = fps_override {
                meta.fps = fps;
            }
            meta.validate()?;
            Ok(FrameReader {
                meta,
                source: Source::Raw {
                    reader,
                    path: path.to_path_buf(),
                },
                next: 0,
            })
        }
        VideoFormat::PngSequence => {
            let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
            let mut indexed = Vec::new();
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(path, e))?;
                let name = entry.file_name();
                if let Some(index) = name.to_str().and_then(parse_png_index) {
                    indexed.push((index, entry.path()));
                }
            }
            if indexed.is_empty() {
                return Err(Error::NoFrames);
            }
            indexed.sort_by_key(|(i, _)| *i);
            let first = indexed[0].0;
            for (pos, (index, _)) in indexed.iter().enumerate() {
                if *index != first + pos {
                    return Err(Error::Sequence(format!(
                        "expected {} after {}, found {}",
                        png_frame_name(first + pos),
                        png_frame_name(first + pos.saturating_sub(1)),
                        png_frame_name(*index)
                    )));
                }
            }
            let files: Vec<PathBuf> = indexed.into_iter().map(|(_, p)| p).collect();
            let first_img = image::open(&files[0]).map_err(|e| Error::Decode {
                index: 0,
                path: files[0].clone(),
                message: e.to_string(),
            })?;
            let sidecar = read_sidecar(path)?;
            let fps = fps_override
                .or(sidecar.map(|m| m.fps))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "{}: frame rate unknown (no {} sidecar and no override)",
                        path.display(),
                        META_SIDECAR
                    ))
                })?;
            let meta = VideoMeta {
                fps,
                frame_count: files.len(),
                width: first_img.width() as usize,
                height: first_img.height() as usize,
            };
            meta.validate()?;
            Ok(FrameReader {
                meta,
                source: Source::Png { files },
                next: 0,
            })
        }
    }
}

enum Sink {
    Png { dir: PathBuf },
    Raw { writer: BufWriter<File>, path: PathBuf },
}

/// Streaming frame writer. Call [`FrameWriter::finish`] to flush headers.
pub struct FrameWriter {
    sink: Sink,
    fps: f64,
    dims: Option<(usize, usize)>,
    written: usize,
}

impl FrameWriter {
    pub fn create(path: impl AsRef<Path>, fps: f64) -> Result<Self> {
        let path = path.as_ref();
        let sink = match VideoFormat::detect(path) {
            VideoFormat::PngSequence => {
                fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
                Sink::Png {
                    dir: path.to_path_buf(),
                }
            }
            VideoFormat::Raw => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                let file = File::create(path).map_err(|e| Error::io(path, e))?;
                Sink::Raw {
                    writer: BufWriter::new(file),
                    path: path.to_path_buf(),
                }
            }
        };
        Ok(Self {
            sink,
            fps,
            dims: None,
            written: 0,
        })
    }

    pub fn write(&mut self, frame: &Frame) -> Result<()> {
        let index = self.written;
        let (width, height) = (frame.width(), frame.height());
        match self.dims {
            None => {
                self.dims = Some((width, height));
                if let Sink::Raw { writer, path } = &mut self.sink {
                    let meta = VideoMeta {
                        fps: self.fps,
                        frame_count: 0,
                        width,
                        height,
                    };
                    writeln!(writer, "{}", meta.header_line()).map_err(|e| Error::io(path.clone(), e))?;
                }
            }
            Some((w, h)) if (w, h) != (width, height) => {
                return Err(Error::DimensionMismatch {
                    index,
                    width: w,
                    height: h,
                    got_width: width,
                    got_height: height,
                });
            }
            Some(_) => {}
        }
        match &mut self.sink {
            Sink::Png { dir } => {
                let path = dir.join(png_frame_name(index));
                let encode_err = |e: image::ImageError| Error::Encode {
                    index,
                    path: path.clone(),
                    message: e.to_string(),
                };
                if frame.chroma.is_some() {
                    let img: RgbImage = ImageBuffer::from_raw(width as u32, height as u32, frame.to_rgb8())
                        .expect("rgb buffer sized from frame");
                    img.save(&path).map_err(encode_err)?;
                } else {
                    let bytes = frame.luma.data().iter().map(|&v| quantize(v)).collect();
                    let img: GrayImage = ImageBuffer::from_raw(width as u32, height as u32, bytes)
                        .expect("gray buffer sized from frame");
                    img.save(&path).map_err(encode_err)?;
                }
            }
            Sink::Raw { writer, path } => {
                let bytes = raw_frame_bytes(frame);
                writer.write_all(&bytes).map_err(|e| Error::io(path.clone(), e))?;
            }
        }
        self.written += 1;
        Ok(())
    }

    /// Finalize headers and sidecars; returns the number of frames written.
    pub fn finish(self) -> Result<usize> {
        let Some((width, height)) = self.dims else {
            return Err(Error::NoFrames);
        };
        let meta = VideoMeta {
            fps: self.fps,
            frame_count: self.written,
            width,
            height,
        };
        match self.sink {
            Sink::Png { dir } => {
                let path = dir.join(META_SIDECAR);
                fs::write(&path, format!("{}\n", meta.header_line())).map_err(|e| Error::io(path, e))?;
            }
            Sink::Raw { writer, path } => {
                let mut file = writer
                    .into_inner()
                    .map_err(|e| Error::io(path.clone(), e.into_error()))?;
                file.seek(SeekFrom::Start(0)).map_err(|e| Error::io(path.clone(), e))?;
                writeln!(file, "{}", meta.header_line()).map_err(|e| Error::io(path.clone(), e))?;
                file.flush().map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(self.written)
    }
}

fn raw_frame_bytes(frame: &Frame) -> Vec<u8> {
    let (width, height) = (frame.width(), frame.height());
    let (cw, ch) = chroma_dims(width, height);
    let mut bytes = Vec::with_capacity(width * height + 2 * cw * ch);
    bytes.extend(frame.luma.data().iter().map(|&v| quantize(v)));
    for c in 0..2 {
        for cy in 0..ch {
            for cx in 0..cw {
                let value = match &frame.chroma {
                    Some(planes) => {
                        let plane = &planes[c];
                        let mut acc = 0.0f32;
                        let mut n = 0.0f32;
                        for y in (2 * cy)..(2 * cy + 2).min(height) {
                            for x in (2 * cx)..(2 * cx + 2).min(width) {
                                acc += plane.get(x, y);
                                n += 1.0;
                            }
                        }
                        acc / n
                    }
                    None => 0.5,
                };
                bytes.push(quantize(value));
            }
        }
    }
    bytes
}

/// Write a whole stream; fails with [`Error::NoFrames`] on an empty stream.
pub fn write_frame_sequence<'a, I>(frames: I, path: impl AsRef<Path>, fps: f64) -> Result<usize>
where
    I: IntoIterator<Item = &'a Frame>,
{
    let mut writer = FrameWriter::create(path, fps)?;
    for frame in frames {
        writer.write(frame)?;
    }
    writer.finish()
}
