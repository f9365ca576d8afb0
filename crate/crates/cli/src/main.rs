mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pulsemag::frame_io::{read_frame_sequence, Frame, FrameWriter, VideoMeta};
use pulsemag::magnify::{run_1d_demo, write_demo_csv, GateCsvWriter, MagnifyConfig, Magnifier, Mode, OutputFrame};
use pulsemag::metrics::{CrossSectionBuilder, SampleLine, SsimSeries, ssim_frame};
use pulsemag::pyramid::{dump_pyramid, DEFAULT_OCTAVE_FRACTION, DEFAULT_ORIENTATIONS};
use pulsemag::synthetic::{
    gen_profile, inject_tool_excursion, write_ground_truth_csv, write_mask_png, PulseProfile, SyntheticScene,
};
use pulsemag::temporal_filter::DEFAULT_RADIUS_MULT;
use pulsemag::tmasf::TmasfTemplate;

use manifest::{sidecar_path, Manifest};

/// Thread-count override for the internal worker pool.
const THREADS_ENV: &str = "PULSEMAG_THREADS";

#[derive(Parser, Debug)]
#[command(name = "pulsemag", version, about = "Pulse-motion magnification with tool-motion gating")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Magnify pulsatile motion in a video.
    Magnify(MagnifyArgs),
    /// Render a synthetic pulsating-vessel video with ground truth.
    Synth(SynthArgs),
    /// Single-coefficient demonstration table as CSV.
    Demo1d(DemoArgs),
    /// Frame-wise SSIM between two videos.
    EvalSsim(EvalArgs),
    /// Spatio-temporal cross-section along a line.
    XtSlice(SliceArgs),
}

#[derive(Clone, Copy, Debug, Serialize)]
struct Crop {
    x: usize,
    y: usize,
    width: usize,
    height: usize,
}

fn parse_crop(s: &str) -> Result<Crop, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, width, height] if width > 0 && height > 0 => Ok(Crop { x, y, width, height }),
        _ => Err("expected X,Y,WIDTH,HEIGHT with positive size".into()),
    }
}

fn parse_line(s: &str) -> Result<SampleLine, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x0, y0, x1, y1] => Ok(SampleLine::new(x0, y0, x1, y1)),
        _ => Err("expected X0,Y0,X1,Y1".into()),
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: pulsemag::Error| e.to_string())
}

#[derive(Args, Debug, Serialize)]
struct PyramidArgs {
    /// Orientations per scale.
    #[arg(long, default_value_t = DEFAULT_ORIENTATIONS)]
    orientations: usize,
    /// Scales per octave.
    #[arg(long, default_value_t = DEFAULT_OCTAVE_FRACTION)]
    octave_fraction: usize,
    /// Kernel radius in units of sigma.
    #[arg(long, default_value_t = DEFAULT_RADIUS_MULT)]
    radius_mult: f64,
}

#[derive(Args, Debug, Serialize)]
struct MagnifyArgs {
    /// Input video (PNG directory, or .raw/.yuv file).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output video; format chosen by extension like the input.
    #[arg(long = "out", value_name = "PATH")]
    output: PathBuf,
    /// Frame rate; overrides the value stored with the input.
    #[arg(long)]
    fps: Option<f64>,
    /// Heart rate in beats per minute.
    #[arg(long)]
    bpm: f64,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    beta: f64,
    #[arg(long, default_value = "tmasf", value_parser = parse_mode)]
    mode: Mode,
    /// Output frames to skip before template capture starts.
    #[arg(long, default_value_t = 0)]
    init_frames: usize,
    /// Write per-frame, per-band open-gate fractions.
    #[arg(long, value_name = "CSV")]
    gates_csv: Option<PathBuf>,
    /// Crop the input before processing.
    #[arg(long, value_name = "X,Y,W,H", value_parser = parse_crop)]
    crop: Option<Crop>,
    /// Integer box downscale applied after cropping.
    #[arg(long, value_name = "FACTOR")]
    scale: Option<usize>,
    /// Save the captured template.
    #[arg(long, value_name = "PATH")]
    template_out: Option<PathBuf>,
    /// Gate with a previously saved template instead of capturing one.
    #[arg(long, value_name = "PATH", conflicts_with = "init_frames")]
    template_in: Option<PathBuf>,
    /// Dump amplitude and phase images of the first frame's pyramid.
    #[arg(long, value_name = "DIR")]
    dump_pyramid: Option<PathBuf>,
    #[command(flatten)]
    pyramid: PyramidArgs,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long = "out", value_name = "PATH")]
    output: PathBuf,
    #[arg(long, default_value_t = 180)]
    width: usize,
    #[arg(long, default_value_t = 180)]
    height: usize,
    #[arg(long, default_value_t = 250)]
    frames: usize,
    #[arg(long, default_value_t = 25.0)]
    fps: f64,
    #[arg(long, default_value_t = 72.0)]
    bpm: f64,
    /// Half the peak-to-peak wall displacement, in pixels.
    #[arg(long, default_value_t = 0.1)]
    amplitude: f64,
    #[arg(long, default_value_t = 12.0)]
    vessel_half_width: f64,
    #[arg(long, default_value_t = 0.0)]
    vessel_angle_deg: f64,
    #[arg(long, default_value_t = 0.5)]
    vessel_contrast: f64,
    /// First frame of a horizontal tool sweep.
    #[arg(long, requires = "tool_exit")]
    tool_entry: Option<usize>,
    /// Last frame of the tool sweep.
    #[arg(long, requires = "tool_entry")]
    tool_exit: Option<usize>,
    #[arg(long, default_value_t = 20.0)]
    tool_width: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 7)]
    texture_seed: u64,
    #[arg(long, default_value_t = 11)]
    noise_seed: u64,
    /// Maximum relative beat-to-beat period change.
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long, default_value_t = 3)]
    jitter_seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct DemoArgs {
    /// Output CSV; standard output when omitted.
    #[arg(long = "out", value_name = "CSV")]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    bpm: f64,
    #[arg(long, default_value_t = 25.0)]
    fps: f64,
    #[arg(long, default_value_t = 250)]
    frames: usize,
    /// Half peak-to-peak of the pulse phase, in radians.
    #[arg(long, default_value_t = 0.1)]
    amplitude: f64,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    init_frames: usize,
    /// First frame of an injected tool excursion.
    #[arg(long, requires = "tool_end")]
    tool_start: Option<usize>,
    #[arg(long, requires = "tool_start")]
    tool_end: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    tool_magnitude: f64,
    /// Raised-cosine ramp length of the excursion, in frames.
    #[arg(long, default_value_t = 5)]
    tool_ramp: usize,
    #[arg(long, default_value_t = DEFAULT_RADIUS_MULT)]
    radius_mult: f64,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Reference video (usually the input).
    #[arg(long)]
    reference: PathBuf,
    /// Video to compare.
    #[arg(long)]
    test: PathBuf,
    /// Compare reference frame t with test frame t + offset.
    #[arg(long, default_value_t = 0)]
    offset: usize,
    /// Run manifest of the test video; its passthrough frames are left out of the summary.
    #[arg(long, value_name = "JSON")]
    manifest: Option<PathBuf>,
    /// Directory for ssim.csv and ssim_summary.json.
    #[arg(long = "out", value_name = "DIR")]
    output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SliceArgs {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "X0,Y0,X1,Y1", value_parser = parse_line)]
    line: SampleLine,
    #[arg(long = "out", value_name = "PNG")]
    output: PathBuf,
}

/// Errors detected before touching any file.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", describe(&e));
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Magnify(a) => magnify(a, &cli.command),
        Command::Synth(a) => synth(a, &cli.command),
        Command::Demo1d(a) => demo(a),
        Command::EvalSsim(a) => eval_ssim(a, &cli.command),
        Command::XtSlice(a) => xt_slice(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// The error chain, skipping causes whose text the outer messages already include.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")
}

fn preprocess(frame: Frame, crop: Option<Crop>, scale: Option<usize>) -> pulsemag::Result<Frame> {
    let frame = match crop {
        Some(c) => frame.crop(c.x, c.y, c.width, c.height)?,
        None => frame,
    };
    match scale {
        Some(f) if f > 1 => frame.downscale(f),
        _ => Ok(frame),
    }
}

fn output_dims(src: &VideoMeta, crop: Option<Crop>, scale: Option<usize>) -> anyhow::Result<(usize, usize)> {
    let (mut w, mut h) = (src.width, src.height);
    if let Some(c) = crop {
        if c.x + c.width > w || c.y + c.height > h {
            bail!(usage(format!(
                "crop {}x{}+{}+{} exceeds the {w}x{h} input",
                c.width, c.height, c.x, c.y
            )));
        }
        (w, h) = (c.width, c.height);
    }
    if let Some(f) = scale.filter(|&f| f > 1) {
        (w, h) = (w / f, h / f);
    }
    Ok((w, h))
}

fn magnify(a: &MagnifyArgs, command: &Command) -> anyhow::Result<()> {
    let cfg = MagnifyConfig {
        alpha: a.alpha,
        beta: a.beta,
        mode: a.mode,
        bpm: a.bpm,
        init_frames: a.init_frames,
        n_orientations: a.pyramid.orientations,
        octave_fraction: a.pyramid.octave_fraction,
        radius_mult: a.pyramid.radius_mult,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.scale == Some(0) {
        bail!(usage("--scale must be at least 1"));
    }
    if a.fps.is_some_and(|f| !(f.is_finite() && f > 0.0)) {
        bail!(usage("--fps must be > 0"));
    }
    if a.mode == Mode::Vmm && (a.template_in.is_some() || a.template_out.is_some()) {
        bail!(usage("template options require --mode tmasf"));
    }
    if same_path(&a.input, &a.output) {
        bail!(usage("--out must differ from --in"));
    }

    let reader = read_frame_sequence(&a.input, a.fps)?;
    let src = reader.meta();
    let (width, height) = output_dims(&src, a.crop, a.scale)?;
    let meta = VideoMeta { width, height, ..src };
    let mut magnifier = Magnifier::new(meta, cfg.clone())?;
    if let Some(path) = &a.template_in {
        magnifier.use_template(TmasfTemplate::load(path)?)?;
    }
    log::info!(
        "{} frames {}x{} at {} fps, kernel radius {}, period {}",
        meta.frame_count,
        width,
        height,
        meta.fps,
        magnifier.latency(),
        magnifier.period()
    );

    let mut writer = FrameWriter::create(&a.output, meta.fps)?;
    let mut gates = a.gates_csv.as_ref().map(GateCsvWriter::create).transpose()?;
    let mut statuses = Vec::with_capacity(meta.frame_count);
    let mut emit = |outs: Vec<OutputFrame>| -> anyhow::Result<()> {
        for out in outs {
            writer.write(&out.frame)?;
            if let (Some(g), Some(f)) = (gates.as_mut(), &out.gate_open_fraction) {
                g.write(out.frame.index, f)?;
            }
            statuses.push(out.status);
        }
        Ok(())
    };

    for (i, frame) in reader.enumerate() {
        let frame = preprocess(frame?, a.crop, a.scale)?;
        if i == 0 {
            if let Some(dir) = &a.dump_pyramid {
                dump_pyramid(&magnifier.pyramid().analyze(&frame)?, dir)?;
            }
        }
        if let Some(outs) = magnifier.push(frame)? {
            emit(outs)?;
        }
        if (i + 1) % 25 == 0 {
            log::info!("processed {} frames", i + 1);
        }
    }
    for outs in magnifier.finish()? {
        emit(outs)?;
    }
    let written = writer.finish()?;
    if let Some(g) = gates {
        g.finish()?;
    }
    if let (Some(path), Some(template)) = (&a.template_out, magnifier.template()) {
        template.save(path)?;
    }

    let kernel = magnifier.kernel();
    let mut m = Manifest::new(command);
    m.set("input_meta", &src);
    m.set("output_meta", &meta);
    m.set("config", &cfg);
    m.set("kernel", &serde_json::json!({
        "sigma": kernel.sigma,
        "radius": kernel.radius,
        "taps": kernel.taps,
    }));
    m.set("period_frames", &magnifier.period());
    m.set("capture_start", &magnifier.capture_start());
    m.set("pyramid", magnifier.pyramid().spec());
    m.set("frames_written", &written);
    m.set("frame_status", &statuses);
    m.write(&sidecar_path(&a.output, "manifest.json"))?;
    Ok(())
}

fn same_path(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

fn synth(a: &SynthArgs, command: &Command) -> anyhow::Result<()> {
    let mut profile = PulseProfile::new(a.bpm, a.fps, a.amplitude, a.frames);
    if let Some(j) = a.jitter {
        profile = profile.with_jitter(j, a.jitter_seed);
    }
    profile.validate().map_err(|e| usage(e.to_string()))?;
    let mut scene = SyntheticScene::new(a.width, a.height);
    scene.vessel.half_width = a.vessel_half_width;
    scene.vessel.angle = a.vessel_angle_deg.to_radians();
    scene.vessel.contrast = a.vessel_contrast;
    scene.texture_seed = a.texture_seed;
    scene.noise_sigma = a.noise_sigma;
    scene.noise_seed = a.noise_seed;
    if let (Some(entry), Some(exit)) = (a.tool_entry, a.tool_exit) {
        if entry > exit {
            bail!(usage("--tool-entry must not exceed --tool-exit"));
        }
        scene = scene.with_sweep(entry, exit);
        if let Some(tool) = scene.tool.as_mut() {
            tool.width = a.tool_width;
        }
    }
    scene.validate(a.frames).map_err(|e| usage(e.to_string()))?;

    let series = gen_profile(&profile)?;
    let mut writer = FrameWriter::create(&a.output, a.fps)?;
    let mask_dir = sidecar_path(&a.output, "masks");
    let mut masks = 0;
    for r in pulsemag::synthetic::render_scene(&scene, &series)? {
        writer.write(&r.frame)?;
        if let Some(mask) = &r.tool_mask {
            std::fs::create_dir_all(&mask_dir).with_context(|| format!("creating {}", mask_dir.display()))?;
            write_mask_png(mask_dir.join(format!("mask_{:06}.png", r.frame.index)), a.width, a.height, mask)?;
            masks += 1;
        }
    }
    writer.finish()?;
    write_ground_truth_csv(sidecar_path(&a.output, "ground_truth.csv"), &scene, &series)?;

    let mut m = Manifest::new(command);
    m.set("profile", &profile);
    m.set("scene", &scene);
    m.set("mask_frames", &masks);
    m.write(&sidecar_path(&a.output, "manifest.json"))?;
    Ok(())
}

fn demo(a: &DemoArgs) -> anyhow::Result<()> {
    let cfg = MagnifyConfig {
        alpha: a.alpha,
        beta: a.beta,
        bpm: a.bpm,
        mode: Mode::Tmasf,
        init_frames: a.init_frames,
        radius_mult: a.radius_mult,
        ..Default::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let profile = PulseProfile::new(a.bpm, a.fps, a.amplitude, a.frames);
    profile.validate().map_err(|e| usage(e.to_string()))?;
    let mut series = gen_profile(&profile)?;
    if let (Some(start), Some(end)) = (a.tool_start, a.tool_end) {
        if start > end || end >= a.frames {
            bail!(usage(format!("tool excursion {start}..={end} must lie within {} frames", a.frames)));
        }
        inject_tool_excursion(&mut series, start, end, a.tool_magnitude, a.tool_ramp);
    }
    let rows = run_1d_demo(&series, a.fps, &cfg)?;
    match &a.output {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_demo_csv(&rows, std::io::BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))?;
        }
        None => write_demo_csv(&rows, std::io::stdout().lock()).context("writing to stdout")?,
    }
    Ok(())
}

fn eval_ssim(a: &EvalArgs, command: &Command) -> anyhow::Result<()> {
    let excluded: Option<Vec<bool>> = match &a.manifest {
        Some(path) => Some(manifest::passthrough_flags(path)?),
        None => None,
    };
    let reference = read_frame_sequence(&a.reference, None)?;
    let test = read_frame_sequence(&a.test, None)?;
    let (rm, tm) = (reference.meta(), test.meta());
    if tm.frame_count != rm.frame_count + a.offset {
        bail!(
            "{} reference frames cannot be aligned with {} test frames at offset {}",
            rm.frame_count,
            tm.frame_count,
            a.offset
        );
    }
    let mut series = SsimSeries::default();
    for (t, (r, f)) in reference.zip(test.skip(a.offset)).enumerate() {
        let value = ssim_frame(&r?, &f?)?;
        let skip = excluded.as_ref().and_then(|e| e.get(t + a.offset).copied()).unwrap_or(false);
        series.push(value, skip);
    }
    std::fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    series.write_csv(a.output.join("ssim.csv"))?;
    series.write_summary_json(a.output.join("ssim_summary.json"))?;
    let mut m = Manifest::new(command);
    m.set("summary", &series.summary());
    m.write(&a.output.join("manifest.json"))?;
    println!("{}", serde_json::to_string_pretty(&series.summary())?);
    Ok(())
}

fn xt_slice(a: &SliceArgs) -> anyhow::Result<()> {
    let reader = read_frame_sequence(&a.input, None)?;
    let meta = reader.meta();
    let mut builder =
        CrossSectionBuilder::new(a.line, meta.width, meta.height).map_err(|e| usage(e.to_string()))?;
    for frame in reader {
        builder.push(&frame?)?;
    }
    builder.finish().write_png(&a.output)?;
    Ok(())
}
