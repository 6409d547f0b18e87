//! `evdepth` command-line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 data or contract error, 3 I/O
//! error. Summaries go to stdout; `--json` switches stdout to JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evdepth::bench::{bench_encoders, random_stream};
use evdepth::distill::{
    build_manifest, export_stacks, BuildOptions, DatasetManifest, Slicing, DEFAULT_VOXEL_BINS,
    DEFAULT_WINDOW_US,
};
use evdepth::fusion::{RecurrentFusionParams, RecurrentRunner, ToyExtractor, DEFAULT_CHANNELS, DEFAULT_SCALES, DEFAULT_UNROLL};
use evdepth::metrics::{aggregate, evaluate, Aggregation, EvalOptions, FrameMetrics, MetricsDocument};
use evdepth::repr::LayoutKind;
use evdepth::sim::{read_frame_dir, simulate, SimConfig};
use evdepth::supervision::{lstsq_align, DEFAULT_K_SCALES, DEFAULT_LAMBDA};
use evdepth::{read_events, write_events, DepthMap, ErrorKind, EventFormat, EventStream, Layout, SliceSpec, ValidMask};
use serde_json::json;

const THREADS_ENV: &str = "EVDEPTH_THREADS";
const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "evdepth", version, about = "Event-camera depth toolkit")]
struct Cli {
    /// Print machine-readable JSON on stdout instead of a summary.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of timestamped 8-bit PGM frames into events.
    Simulate {
        frames_dir: PathBuf,
        /// Contrast threshold in log-intensity units.
        #[arg(short = 'C', long, default_value_t = 0.1)]
        contrast: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Extract one SBT/SBN slice of an event file into a new event file.
    Slice {
        events: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Encode one slice into an event stack (PFM, plus PPM for 3 channels).
    Encode {
        events: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        layout: LayoutArgs,
        /// PFM output; voxel grids with other than 3 bins write `<stem>_c<i>.pfm`.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        ppm: Option<PathBuf>,
    },
    /// Score predicted depth maps against ground truth, paired by file name.
    Evaluate {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        #[arg(long)]
        mask_dir: Option<PathBuf>,
        /// Skip the least-squares scale/shift alignment.
        #[arg(long)]
        no_align: bool,
        #[arg(long, default_value_t = 1e-3)]
        clamp_min: f64,
        #[arg(long, default_value_t = f64::INFINITY)]
        clamp_max: f64,
        #[arg(long, value_enum, default_value_t = AggregationArg::PerPixel)]
        aggregation: AggregationArg,
        #[arg(long)]
        json_out: Option<PathBuf>,
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Fit the scale and shift mapping a prediction onto a target.
    Align {
        pred: PathBuf,
        target: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Write the aligned prediction here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Build and export distillation datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Recurrent multi-scale fusion model.
    #[command(subcommand)]
    Fusion(FusionCommand),
    /// Measure encoder throughput.
    Bench {
        /// Event file to encode; omit with --generate.
        events: Option<PathBuf>,
        /// Generate a random stream with this many events instead.
        #[arg(long)]
        generate: Option<usize>,
        #[arg(long, default_value_t = 346)]
        width: u16,
        #[arg(long, default_value_t = 260)]
        height: u16,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = DEFAULT_VOXEL_BINS)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Pair frames with event slices and proxy labels into a manifest.
    Build {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        proxy: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        layout: LayoutArgs,
        #[arg(long)]
        drop_empty: bool,
        #[arg(long, default_value = "unspecified")]
        teacher: String,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_K_SCALES)]
        k_scales: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Encode every manifest record into an output directory.
    Export {
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Defaults to the manifest's encoder.
        #[arg(long)]
        layout: Option<LayoutKind>,
        #[arg(long)]
        bins: Option<usize>,
    },
}

#[derive(Subcommand)]
enum FusionCommand {
    /// Run the recurrent fusion model over consecutive slices.
    Run {
        events: PathBuf,
        /// Number of recurrent steps.
        #[arg(long, default_value_t = DEFAULT_UNROLL)]
        steps: usize,
        /// Reference time of the first slice; defaults to one window.
        #[arg(long)]
        t_start: Option<u64>,
        /// Spacing between reference times; defaults to the window.
        #[arg(long)]
        step_us: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_WINDOW_US)]
        window_us: u64,
        #[command(flatten)]
        layout: LayoutArgs,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_UNROLL)]
        unroll: usize,
        /// Load weights from `<path>.bin` + `<path>.json` instead of seeding them.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Save the weights used to `<path>.bin` + `<path>.json`.
        #[arg(long)]
        save_weights: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Copy)]
struct WindowArgs {
    /// Reference time t_d in microseconds; defaults to the last event.
    #[arg(long)]
    t_d: Option<u64>,
    /// SBT window in microseconds.
    #[arg(long, conflicts_with = "count")]
    window_us: Option<u64>,
    /// SBN event count.
    #[arg(long)]
    count: Option<usize>,
}

impl WindowArgs {
    fn slicing(&self) -> Slicing {
        match (self.window_us, self.count) {
            (_, Some(count)) => Slicing::Sbn { count },
            (window, None) => Slicing::Sbt {
                window: window.unwrap_or(DEFAULT_WINDOW_US),
            },
        }
    }

    fn spec(&self, stream: &EventStream) -> evdepth::Result<SliceSpec> {
        let t_d = self
            .t_d
            .unwrap_or_else(|| stream.events().last().map_or(0, |e| e.t));
        self.slicing().at(t_d)
    }
}

#[derive(Args, Clone, Copy)]
struct LayoutArgs {
    #[arg(long, default_value = "voxel")]
    layout: LayoutKind,
    /// Voxel-grid bins.
    #[arg(long, default_value_t = DEFAULT_VOXEL_BINS)]
    bins: usize,
}

impl LayoutArgs {
    fn layout(&self) -> Layout {
        layout_of(self.layout, self.bins)
    }
}

fn layout_of(kind: LayoutKind, bins: usize) -> Layout {
    match kind {
        LayoutKind::Voxel => Layout::Voxel { bins },
        LayoutKind::ImageLike => Layout::ImageLike,
        LayoutKind::Tencode => Layout::Tencode,
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    PerPixel,
    PerFrame,
}

enum CliError {
    Usage(String),
    Lib(evdepth::Error),
}

impl From<evdepth::Error> for CliError {
    fn from(e: evdepth::Error) -> Self {
        CliError::Lib(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Lib(e) => {
                write!(f, "{e}")?;
                let mut source = std::error::Error::source(e);
                while let Some(s) = source {
                    write!(f, ": {s}")?;
                    source = s.source();
                }
                Ok(())
            }
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) => match e.kind() {
                ErrorKind::Data => 2,
                ErrorKind::Io => 3,
            },
        }
    }
}

type CliResult = Result<(), CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Lib(evdepth::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Lib(evdepth::Error::Dataset(msg.into()))
}

fn emit(json: bool, value: serde_json::Value, summary: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
    } else {
        println!("{}", summary());
    }
}

fn load_events(path: &Path) -> evdepth::Result<EventStream> {
    read_events(path, EventFormat::from_path(path))
}

fn cmd_simulate(json: bool, frames_dir: &Path, contrast: f64, out: &Path) -> CliResult {
    let config = SimConfig::new(contrast)?;
    let frames = read_frame_dir(frames_dir)?;
    let stream = simulate(&frames, &config)?;
    write_events(&stream, out, EventFormat::from_path(out))?;
    let (pos, neg) = stream
        .events()
        .iter()
        .fold((0, 0), |(p, n), e| if e.polarity.sign() > 0 { (p + 1, n) } else { (p, n + 1) });
    emit(
        json,
        json!({
            "frames": frames.len(),
            "width": stream.width(),
            "height": stream.height(),
            "contrast_threshold": contrast,
            "events": stream.len(),
            "positive": pos,
            "negative": neg,
            "output": out,
        }),
        || {
            format!(
                "simulated {} events ({pos} positive, {neg} negative) from {} frames at {}x{}, C={contrast}\nwrote {}",
                stream.len(),
                frames.len(),
                stream.width(),
                stream.height(),
                out.display()
            )
        },
    );
    Ok(())
}

fn slice_json(spec: &SliceSpec, slice: &evdepth::EventSlice<'_>) -> serde_json::Value {
    json!({
        "slice": spec,
        "interval": [slice.t_start(), slice.t_end()],
        "events": slice.len(),
    })
}

fn warn_empty(slice: &evdepth::EventSlice<'_>) {
    if slice.is_empty() {
        eprintln!(
            "warning: slice [{}, {}] contains no events",
            slice.t_start(),
            slice.t_end()
        );
    }
}

fn cmd_slice(json: bool, events: &Path, window: WindowArgs, out: &Path) -> CliResult {
    let stream = load_events(events)?;
    let spec = window.spec(&stream)?;
    let slice = stream.slice(&spec)?;
    warn_empty(&slice);
    let sub = EventStream::new(stream.width(), stream.height(), slice.events().to_vec())?;
    write_events(&sub, out, EventFormat::from_path(out))?;
    emit(json, slice_json(&spec, &slice), || {
        format!(
            "{} events in [{}, {}], wrote {}",
            slice.len(),
            slice.t_start(),
            slice.t_end(),
            out.display()
        )
    });
    Ok(())
}

fn cmd_encode(
    json: bool,
    events: &Path,
    window: WindowArgs,
    layout: Layout,
    out: &Path,
    ppm: Option<&Path>,
) -> CliResult {
    let stream = load_events(events)?;
    let spec = window.spec(&stream)?;
    let slice = stream.slice(&spec)?;
    warn_empty(&slice);
    let stack = layout.encode(&slice)?;
    let mut written = stack.write_pfm(out)?;
    if let Some(p) = ppm {
        stack.write_ppm(p)?;
        written.push(p.to_path_buf());
    }
    let mut value = slice_json(&spec, &slice);
    value["layout"] = json!(layout.to_string());
    value["outputs"] = json!(written);
    emit(json, value, || {
        let files: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
        format!(
            "encoded {} events in [{}, {}] as {layout} ({}x{}x{})\nwrote {}",
            slice.len(),
            slice.t_start(),
            slice.t_end(),
            stack.width(),
            stack.height(),
            stack.channels(),
            files.join(", ")
        )
    });
    Ok(())
}

fn read_depth(path: &Path) -> evdepth::Result<DepthMap> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => DepthMap::read_pgm16(path),
        _ => DepthMap::read_pfm(path),
    }
}

/// Depth files in `dir` keyed by stem. PGM sidecars are not depth files.
fn depth_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !path.is_file() || !matches!(ext, "pfm" | "pgm") {
            continue;
        }
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(data_err(format!(
                "{} and {} share the name '{stem}'",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    json: bool,
    pred_dir: &Path,
    gt_dir: &Path,
    mask_dir: Option<&Path>,
    options: EvalOptions,
    aggregation: Aggregation,
    json_out: Option<&Path>,
    csv_out: Option<&Path>,
) -> CliResult {
    let preds = depth_files(pred_dir)?;
    let gts = depth_files(gt_dir)?;
    let only_pred: Vec<&str> = preds.keys().filter(|k| !gts.contains_key(*k)).map(String::as_str).collect();
    let only_gt: Vec<&str> = gts.keys().filter(|k| !preds.contains_key(*k)).map(String::as_str).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        return Err(data_err(format!(
            "prediction and ground-truth sets differ; missing ground truth: [{}]; missing prediction: [{}]",
            only_pred.join(", "),
            only_gt.join(", ")
        )));
    }
    if preds.is_empty() {
        return Err(data_err(format!("no depth maps in {}", pred_dir.display())));
    }
    let mut frames = Vec::with_capacity(preds.len());
    for (name, pred_path) in &preds {
        let frame = (|| -> evdepth::Result<FrameMetrics> {
            let pred = read_depth(pred_path)?;
            let gt = read_depth(&gts[name])?;
            let mut mask = ValidMask::from_depth(&gt);
            if let Some(dir) = mask_dir {
                mask = mask.and(&ValidMask::read_pgm(dir.join(format!("{name}.pgm")))?)?;
            }
            Ok(FrameMetrics {
                name: name.clone(),
                metrics: evaluate(&pred, &gt, &mask, &options)?,
            })
        })()
        .map_err(|e| data_or_io(name, e))?;
        frames.push(frame);
    }
    let reports: Vec<_> = frames.iter().map(|f| f.metrics.clone()).collect();
    let doc = MetricsDocument {
        aggregation,
        aggregate: aggregate(&reports, aggregation)?,
        frames,
    };
    let doc_json = serde_json::to_value(&doc).map_err(evdepth::Error::from)?;
    if let Some(p) = json_out {
        let text = serde_json::to_string_pretty(&doc_json).map_err(evdepth::Error::from)? + "\n";
        fs::write(p, text).map_err(|e| io_err(p, e))?;
    }
    if let Some(p) = csv_out {
        fs::write(p, doc.to_csv()).map_err(|e| io_err(p, e))?;
    }
    emit(json, doc_json, || {
        let a = &doc.aggregate;
        format!(
            "{} frames, {} valid pixels, aligned={}\n\
             abs_rel {:.6}  sq_rel {:.6}  rmse {:.6}  rmse_log {:.6}  si_log {:.6}\n\
             delta<1.25 {:.4}  delta<1.25^2 {:.4}  delta<1.25^3 {:.4}",
            doc.frames.len(),
            a.n_valid,
            a.aligned,
            a.abs_rel,
            a.sq_rel,
            a.rmse,
            a.rmse_log,
            a.si_log,
            a.delta1,
            a.delta2,
            a.delta3
        )
    });
    Ok(())
}

/// Prefixes a per-frame error with its name, keeping its classification.
fn data_or_io(name: &str, e: evdepth::Error) -> CliError {
    match e.kind() {
        ErrorKind::Io => CliError::Lib(e),
        ErrorKind::Data => data_err(format!("frame '{name}': {e}")),
    }
}

fn cmd_align(json: bool, pred: &Path, target: &Path, mask: Option<&Path>, out: Option<&Path>) -> CliResult {
    let p = read_depth(pred)?;
    let t = read_depth(target)?;
    let mut m = ValidMask::from_depth(&t);
    if let Some(path) = mask {
        m = m.and(&ValidMask::read_pgm(path)?)?;
    }
    let a = lstsq_align(&p, &t, &m)?;
    if let Some(o) = out {
        p.affine(a.s, a.t).write_pfm(o)?;
    }
    emit(json, json!({"s": a.s, "t": a.t, "n_valid": m.count()}), || {
        format!("s = {}\nt = {}\n({} valid pixels)", a.s, a.t, m.count())
    });
    Ok(())
}

fn cmd_dataset(json: bool, cmd: DatasetCommand) -> CliResult {
    match cmd {
        DatasetCommand::Build {
            events,
            frames,
            proxy,
            gt,
            masks,
            window,
            layout,
            drop_empty,
            teacher,
            lambda,
            k_scales,
            out,
        } => {
            if window.t_d.is_some() {
                return Err(CliError::Usage(
                    "--t-d is taken from the frames in dataset build".into(),
                ));
            }
            let options = BuildOptions {
                slicing: window.slicing(),
                layout: layout.layout(),
                gt_dir: gt,
                mask_dir: masks,
                drop_empty,
                teacher,
                lambda,
                k_scales,
            };
            let manifest = build_manifest(&events, &frames, &proxy, &options)?;
            manifest.save(&out)?;
            let empty = manifest.samples.iter().filter(|s| s.empty).count();
            if empty > 0 {
                eprintln!("warning: {empty} record(s) have empty slices");
            }
            emit(
                json,
                json!({"records": manifest.samples.len(), "empty": empty, "manifest": out}),
                || format!("{} records ({empty} empty), wrote {}", manifest.samples.len(), out.display()),
            );
        }
        DatasetCommand::Export {
            manifest,
            out,
            layout,
            bins,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let layout = match (layout, m.encoder.layout) {
                (None, Layout::Voxel { bins: b }) => Layout::Voxel { bins: bins.unwrap_or(b) },
                (None, l) => l,
                (Some(kind), _) => layout_of(kind, bins.unwrap_or(DEFAULT_VOXEL_BINS)),
            };
            let files = export_stacks(&m, &out, layout)?;
            emit(
                json,
                json!({"records": m.samples.len(), "layout": layout.to_string(), "files": files}),
                || format!("exported {} records as {layout}: {} files in {}", m.samples.len(), files.len(), out.display()),
            );
        }
    }
    Ok(())
}

fn archive_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("json"))
}

fn cmd_fusion(json: bool, cmd: FusionCommand) -> CliResult {
    let FusionCommand::Run {
        events,
        steps,
        t_start,
        step_us,
        window_us,
        layout,
        seed,
        unroll,
        weights,
        save_weights,
        out,
    } = cmd;
    if unroll == 0 || steps == 0 {
        return Err(CliError::Usage("--steps and --unroll must be >= 1".into()));
    }
    let stream = load_events(&events)?;
    let layout = layout.layout();
    let params = match &weights {
        Some(base) => {
            let (bin, manifest) = archive_paths(base);
            RecurrentFusionParams::from_archive(&evdepth::archive::TensorArchive::load(bin, manifest)?)?
        }
        None => RecurrentFusionParams::random(&DEFAULT_SCALES, &DEFAULT_CHANNELS, seed),
    };
    let channels: Vec<usize> = params.cells.iter().map(|c| c.input_channels).collect();
    let extractor = ToyExtractor::with_levels(layout.channels(), &params.scales, &channels, seed);
    if let Some(base) = &save_weights {
        let (bin, manifest) = archive_paths(base);
        params.to_archive().save(bin, manifest)?;
    }
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let t0 = t_start.unwrap_or(window_us);
    let dt = step_us.unwrap_or(window_us);
    let mut runner = RecurrentRunner::new(&extractor, &params);
    let mut records = Vec::with_capacity(steps);
    for i in 0..steps {
        // forward-only: state carries across truncation windows of `unroll`
        let t_d = t0 + i as u64 * dt;
        let slice = stream.slice_sbt(t_d, window_us)?;
        let stack = layout.encode(&slice)?;
        let depth = runner.step(&stack)?;
        let path = out.join(format!("{}.pfm", evdepth::distill::stack_stem(t_d)));
        depth.write_pfm(&path)?;
        let (lo, hi) = depth
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        records.push(json!({
            "t_d": t_d,
            "events": slice.len(),
            "min": lo,
            "max": hi,
            "window": i / unroll,
            "output": path,
        }));
    }
    let max_h = runner.state().map_or(0.0, |s| s.max_abs_hidden());
    emit(
        json,
        json!({"steps": steps, "unroll": unroll, "seed": seed, "layout": layout.to_string(), "max_abs_hidden": max_h, "frames": records}),
        || {
            format!(
                "ran {steps} steps ({layout}, seed {seed}, unroll {unroll}) at {}x{}, max |H| {max_h:.4}\nwrote {}",
                stream.width(),
                stream.height(),
                out.display()
            )
        },
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    json: bool,
    events: Option<&Path>,
    generate: Option<usize>,
    width: u16,
    height: u16,
    repetitions: usize,
    bins: usize,
    seed: u64,
) -> CliResult {
    let stream = match (events, generate) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give either an event file or --generate, not both".into()))
        }
        (Some(p), None) => load_events(p)?,
        (None, Some(n)) => random_stream(width, height, n, n as u64, seed),
        (None, None) => return Err(CliError::Usage("bench needs an event file or --generate N".into())),
    };
    let layouts = [Layout::Voxel { bins }, Layout::ImageLike, Layout::Tencode];
    let report = bench_encoders(&stream, &layouts, repetitions)?;
    let value = serde_json::to_value(&report).map_err(evdepth::Error::from)?;
    emit(json, value, || {
        let mut s = format!(
            "{} events, {}x{}, {} repetitions\n",
            report.events, report.width, report.height, report.repetitions
        );
        for l in &report.layouts {
            let samples: Vec<String> = l.samples_s.iter().map(|v| format!("{v:.4}")).collect();
            s.push_str(&format!(
                "{:<10} {:>8.2} Mev/s  median {:.4} s  samples [{}]  sha256 {}{}  peak rss {}\n",
                l.layout,
                l.events_per_sec / 1e6,
                l.median_s,
                samples.join(", "),
                &l.digests[0][..16],
                if l.deterministic { "" } else { " (differs across repetitions)" },
                l.peak_rss_kib.map_or("n/a".into(), |k| format!("{k} KiB")),
            ));
        }
        s.trim_end().to_string()
    });
    Ok(())
}

fn configure_threads() -> CliResult {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    let json = cli.json;
    match cli.command {
        Command::Simulate {
            frames_dir,
            contrast,
            out,
        } => cmd_simulate(json, &frames_dir, contrast, &out),
        Command::Slice { events, window, out } => cmd_slice(json, &events, window, &out),
        Command::Encode {
            events,
            window,
            layout,
            out,
            ppm,
        } => cmd_encode(json, &events, window, layout.layout(), &out, ppm.as_deref()),
        Command::Evaluate {
            pred_dir,
            gt_dir,
            mask_dir,
            no_align,
            clamp_min,
            clamp_max,
            aggregation,
            json_out,
            csv_out,
        } => {
            if clamp_min.is_nan() || clamp_max.is_nan() || clamp_min > clamp_max {
                return Err(CliError::Usage(format!(
                    "--clamp-min {clamp_min} exceeds --clamp-max {clamp_max}"
                )));
            }
            let options = EvalOptions {
                align: !no_align,
                clamp: (clamp_min, clamp_max),
            };
            let aggregation = match aggregation {
                AggregationArg::PerPixel => Aggregation::PerPixel,
                AggregationArg::PerFrame => Aggregation::PerFrame,
            };
            cmd_evaluate(
                json,
                &pred_dir,
                &gt_dir,
                mask_dir.as_deref(),
                options,
                aggregation,
                json_out.as_deref(),
                csv_out.as_deref(),
            )
        }
        Command::Align {
            pred,
            target,
            mask,
            out,
        } => cmd_align(json, &pred, &target, mask.as_deref(), out.as_deref()),
        Command::Dataset(cmd) => cmd_dataset(json, cmd),
        Command::Fusion(cmd) => cmd_fusion(json, cmd),
        Command::Bench {
            events,
            generate,
            width,
            height,
            repetitions,
            bins,
            seed,
        } => cmd_bench(json, events.as_deref(), generate, width, height, repetitions, bins, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
