//! Cross-modal distillation datasets.
//!
//! Pairs each frame timestamp with the event slice that ends at it and the
//! teacher's proxy depth label for that frame. Proxy labels are consumed as
//! PFM files; producing them is the teacher's job.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventStream, SliceSpec, Timestamp};
use crate::event_io::{read_events, EventFormat};
use crate::raster::{DepthMap, Shaped, ValidMask};
use crate::repr::Layout;
use crate::sim::timestamp_from_stem;
use crate::supervision::{loss_total, LossConfig, LossReport, DEFAULT_K_SCALES, DEFAULT_LAMBDA};

pub const MANIFEST_VERSION: u32 = 1;
/// Default SBT window, 50 ms.
pub const DEFAULT_WINDOW_US: Timestamp = 50_000;
pub const DEFAULT_VOXEL_BINS: usize = 5;
/// Optional per-directory index of `<file name> <timestamp_us>` lines.
pub const TIMESTAMP_INDEX: &str = "timestamps.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Slicing {
    Sbt { window: Timestamp },
    Sbn { count: usize },
}

impl Slicing {
    pub fn at(&self, t_d: Timestamp) -> Result<SliceSpec> {
        match *self {
            Slicing::Sbt { window } => SliceSpec::sbt(t_d, window),
            Slicing::Sbn { count } => SliceSpec::sbn(t_d, count),
        }
    }
}

impl Default for Slicing {
    fn default() -> Self {
        Slicing::Sbt {
            window: DEFAULT_WINDOW_US,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    Full,
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t_d: Timestamp,
    pub events: PathBuf,
    pub slice: SliceSpec,
    /// `[start, end]` in microseconds; `end == t_d` always.
    pub interval: [i64; 2],
    pub event_count: usize,
    /// Set for static intervals that produced no events.
    pub empty: bool,
    pub proxy: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub mask: MaskSource,
    pub width: u16,
    pub height: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    #[serde(flatten)]
    pub layout: Layout,
    pub slicing: Slicing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub teacher: String,
    pub lambda: f64,
    pub k_scales: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub encoder: EncoderSpec,
    pub provenance: Provenance,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_slice(&bytes)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub slicing: Slicing,
    pub layout: Layout,
    pub gt_dir: Option<PathBuf>,
    pub mask_dir: Option<PathBuf>,
    pub drop_empty: bool,
    pub teacher: String,
    pub lambda: f64,
    pub k_scales: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            slicing: Slicing::default(),
            layout: Layout::Tencode,
            gt_dir: None,
            mask_dir: None,
            drop_empty: false,
            teacher: "unspecified".into(),
            lambda: DEFAULT_LAMBDA,
            k_scales: DEFAULT_K_SCALES,
        }
    }
}

/// Frame stems keyed by timestamp, from a `timestamps.txt` index when
/// present, otherwise from zero-padded microsecond file names.
fn frame_timestamps(frames_dir: &Path) -> Result<BTreeMap<Timestamp, String>> {
    let mut out = BTreeMap::new();
    let mut insert = |t: Timestamp, stem: String| -> Result<()> {
        if let Some(prev) = out.insert(t, stem.clone()) {
            return Err(Error::Dataset(format!(
                "frames '{prev}' and '{stem}' share timestamp {t}"
            )));
        }
        Ok(())
    };
    let index = frames_dir.join(TIMESTAMP_INDEX);
    if index.is_file() {
        let text = fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (name, t) = match (parts.next(), parts.next(), parts.next()) {
                (Some(n), Some(t), None) => (n, t),
                _ => {
                    return Err(Error::Dataset(format!(
                        "{}:{}: expected '<file> <timestamp_us>'",
                        index.display(),
                        i + 1
                    )))
                }
            };
            let t: Timestamp = t.parse().map_err(|_| {
                Error::Dataset(format!(
                    "{}:{}: unparsable timestamp '{t}'",
                    index.display(),
                    i + 1
                ))
            })?;
            let stem = Path::new(name)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            insert(t, stem)?;
        }
        return Ok(out);
    }
    let entries = fs::read_dir(frames_dir).map_err(|e| Error::io(frames_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(frames_dir, e))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if hidden || !path.is_file() {
            continue;
        }
        let t = timestamp_from_stem(&path)?;
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        insert(t, stem)?;
    }
    Ok(out)
}

/// One record per frame, ordered by timestamp.
pub fn build_manifest(
    events_path: impl AsRef<Path>,
    frames_dir: impl AsRef<Path>,
    proxy_dir: impl AsRef<Path>,
    options: &BuildOptions,
) -> Result<DatasetManifest> {
    let events_path = events_path.as_ref();
    let (frames_dir, proxy_dir) = (frames_dir.as_ref(), proxy_dir.as_ref());
    let stream = read_events(events_path, EventFormat::from_path(events_path))?;
    let frames = frame_timestamps(frames_dir)?;

    let missing: Vec<String> = frames
        .iter()
        .filter(|(_, stem)| !proxy_dir.join(format!("{stem}.pfm")).is_file())
        .map(|(t, stem)| format!("{stem} (t={t})"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Dataset(format!(
            "missing proxy label in {} for frame(s): {}",
            proxy_dir.display(),
            missing.join(", ")
        )));
    }

    let mut samples = Vec::with_capacity(frames.len());
    for (&t_d, stem) in &frames {
        let spec = options.slicing.at(t_d)?;
        let slice = stream.slice(&spec)?;
        if slice.is_empty() && options.drop_empty {
            continue;
        }
        let ground_truth = options
            .gt_dir
            .as_ref()
            .map(|d| d.join(format!("{stem}.pfm")))
            .filter(|p| p.is_file());
        let mask = options
            .mask_dir
            .as_ref()
            .map(|d| d.join(format!("{stem}.pgm")))
            .filter(|p| p.is_file())
            .map_or(MaskSource::Full, MaskSource::Path);
        samples.push(SampleRecord {
            t_d,
            events: events_path.to_path_buf(),
            slice: spec,
            interval: [slice.t_start(), slice.t_end() as i64],
            event_count: slice.len(),
            empty: slice.is_empty(),
            proxy: proxy_dir.join(format!("{stem}.pfm")),
            ground_truth,
            mask,
            width: stream.width(),
            height: stream.height(),
        });
    }

    Ok(DatasetManifest {
        version: MANIFEST_VERSION,
        encoder: EncoderSpec {
            layout: options.layout,
            slicing: options.slicing,
        },
        provenance: Provenance {
            teacher: options.teacher.clone(),
            lambda: options.lambda,
            k_scales: options.k_scales,
        },
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Proxy labels only.
    Distillation,
    /// Ground truth only; records without it are an error.
    GroundTruth,
    /// Proxy plus ground truth where a record has both.
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub proxy: Option<LossReport>,
    pub ground_truth: Option<LossReport>,
    pub total: f64,
    pub gradient: DepthMap,
}

fn with_record<T>(t_d: Timestamp, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Record {
        t_d,
        source: Box::new(e),
    })
}

/// Loss and gradient of `pred` against the record's targets.
pub fn training_step(
    record: &SampleRecord,
    pred: &DepthMap,
    config: &LossConfig,
    mode: Supervision,
) -> Result<StepOutput> {
    with_record(record.t_d, step_inner(record, pred, config, mode))
}

fn step_inner(
    record: &SampleRecord,
    pred: &DepthMap,
    config: &LossConfig,
    mode: Supervision,
) -> Result<StepOutput> {
    let dims = (record.width as usize, record.height as usize);
    if pred.dims() != dims {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match sensor {dims:?}",
            pred.dims()
        )));
    }
    let proxy = match mode {
        Supervision::Distillation | Supervision::Combined => {
            let target = DepthMap::read_pfm(&record.proxy)?;
            let mask = match &record.mask {
                MaskSource::Full => ValidMask::full(dims.0, dims.1),
                MaskSource::Path(p) => ValidMask::read_pgm(p)?,
            };
            Some(loss_total(pred, &target, &mask, config)?)
        }
        Supervision::GroundTruth => None,
    };
    let ground_truth = match (mode, &record.ground_truth) {
        (Supervision::Distillation, _) | (Supervision::Combined, None) => None,
        (_, Some(path)) => {
            let gt = DepthMap::read_pfm(path)?;
            let mask = ValidMask::from_depth(&gt);
            Some(loss_total(pred, &gt, &mask, config)?)
        }
        (Supervision::GroundTruth, None) => {
            return Err(Error::Dataset("record has no ground-truth depth".into()))
        }
    };
    let mut total = 0.0;
    let mut gradient = DepthMap::filled(dims.0, dims.1, 0.0);
    for (report, grad) in [&proxy, &ground_truth].into_iter().flatten() {
        total += report.total;
        for (g, v) in gradient.values_mut().iter_mut().zip(grad.values()) {
            *g += v;
        }
    }
    Ok(StepOutput {
        proxy: proxy.map(|(r, _)| r),
        ground_truth: ground_truth.map(|(r, _)| r),
        total,
        gradient,
    })
}

/// File stem used for exported stacks.
pub fn stack_stem(t_d: Timestamp) -> String {
    format!("{t_d:012}")
}

/// Encodes every record with `layout` into `out_dir`, writing
/// `<t_d>.ppm` (3-channel layouts) and `<t_d>.pfm` (or per-channel PFMs).
/// Returns the written files in record order.
pub fn export_stacks(
    manifest: &DatasetManifest,
    out_dir: impl AsRef<Path>,
    layout: Layout,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut streams: HashMap<&Path, EventStream> = HashMap::new();
    let mut written = Vec::new();
    for record in &manifest.samples {
        let result = (|| -> Result<()> {
            if !streams.contains_key(record.events.as_path()) {
                let s = read_events(&record.events, EventFormat::from_path(&record.events))?;
                streams.insert(record.events.as_path(), s);
            }
            let stream = &streams[record.events.as_path()];
            let slice = stream.slice(&record.slice)?;
            let stack = layout.encode(&slice)?;
            let stem = stack_stem(record.t_d);
            if stack.channels() == 3 {
                let ppm = out_dir.join(format!("{stem}.ppm"));
                stack.write_ppm(&ppm)?;
                written.push(ppm);
            }
            written.extend(stack.write_pfm(out_dir.join(format!("{stem}.pfm")))?);
            Ok(())
        })();
        with_record(record.t_d, result)?;
    }
    Ok(written)
}

pub fn export_tencode_set(
    manifest: &DatasetManifest,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    export_stacks(manifest, out_dir, Layout::Tencode)
}
