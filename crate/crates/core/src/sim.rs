//! Ideal event-camera simulator.
//!
//! Each pixel keeps a reference log-intensity level, initialized from the
//! first frame. Between consecutive frames the log intensity is linearly
//! interpolated in time, and one event is emitted for every full `±C`
//! crossing relative to the reference, which then advances by `±C`. No noise
//! and no refractory period.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity, Timestamp};
use crate::raster::Pgm;

/// Linear intensity raster, strictly positive, at a timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFrame {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub t: Timestamp,
}

impl IntensityFrame {
    pub fn new(width: usize, height: usize, values: Vec<f64>, t: Timestamp) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "frame {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("non-positive intensity {v}")));
        }
        Ok(Self {
            width,
            height,
            values,
            t,
        })
    }

    /// Frame whose natural-log intensity is `log_values`.
    pub fn from_log(width: usize, height: usize, log_values: &[f64], t: Timestamp) -> Result<Self> {
        Self::new(width, height, log_values.iter().map(|l| l.exp()).collect(), t)
    }

    /// 8-bit PGM sample `v` maps to `(v + 1) / 256`.
    pub fn from_pgm(pgm: &Pgm, t: Timestamp) -> Result<Self> {
        if pgm.maxval > 255 {
            return Err(Error::Format("simulator frames must be 8-bit PGM".into()));
        }
        Self::new(
            pgm.width,
            pgm.height,
            pgm.data.iter().map(|&v| (v as f64 + 1.0) / 256.0).collect(),
            t,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub contrast_threshold: f64,
}

impl SimConfig {
    pub fn new(contrast_threshold: f64) -> Result<Self> {
        if !(contrast_threshold > 0.0 && contrast_threshold.is_finite()) {
            return Err(Error::Parameter(format!(
                "contrast threshold must be > 0, got {contrast_threshold}"
            )));
        }
        Ok(Self { contrast_threshold })
    }
}

/// Converts a frame sequence into an event stream.
pub fn simulate(frames: &[IntensityFrame], config: &SimConfig) -> Result<EventStream> {
    let c = config.contrast_threshold;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Parameter(format!(
            "contrast threshold must be > 0, got {c}"
        )));
    }
    if frames.len() < 2 {
        return Err(Error::InsufficientInput(format!(
            "simulation needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let (width, height) = (frames[0].width, frames[0].height);
    if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(Error::Parameter(format!(
            "unsupported frame size {width}x{height}"
        )));
    }
    for (i, f) in frames.iter().enumerate() {
        if (f.width, f.height) != (width, height) {
            return Err(Error::Shape(format!(
                "frame {i} is {}x{}, expected {width}x{height}",
                f.width, f.height
            )));
        }
        if let Some(v) = f.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "frame {i} has non-positive intensity {v}"
            )));
        }
        if i > 0 && f.t <= frames[i - 1].t {
            return Err(Error::Parameter(format!(
                "frame timestamps must strictly increase (frame {i} at {} after {})",
                f.t,
                frames[i - 1].t
            )));
        }
    }

    let logs: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| f.values.iter().map(|v| v.ln()).collect())
        .collect();

    // Per pixel: the base level and the signed number of thresholds crossed
    // so far; the reference level is `base + level * C`.
    let base = &logs[0];
    let mut level = vec![0i64; width * height];
    let mut events = Vec::new();

    for i in 0..frames.len() - 1 {
        let (t0, t1) = (frames[i].t, frames[i + 1].t);
        let (l0, l1) = (&logs[i], &logs[i + 1]);
        let per_row: Vec<Vec<(usize, Event)>> = level
            .par_chunks_mut(width)
            .enumerate()
            .map(|(y, row)| {
                let mut out = Vec::new();
                for (x, lvl) in row.iter_mut().enumerate() {
                    let idx = y * width + x;
                    let crossings = pixel_crossings(base[idx], l0[idx], l1[idx], lvl, c, t0, t1);
                    for (k, (polarity, t)) in crossings.enumerate() {
                        out.push((k, Event::new(x as u16, y as u16, polarity, t)));
                    }
                }
                out
            })
            .collect();
        let mut interval: Vec<(usize, Event)> = per_row.into_iter().flatten().collect();
        // Deterministic merge: time, then raster order, then crossing order.
        interval.sort_by_key(|(k, e)| (e.t, e.y, e.x, *k));
        events.extend(interval.into_iter().map(|(_, e)| e));
    }

    EventStream::new(width as u16, height as u16, events)
}

/// Crossings of one pixel between two frames, in crossing order.
fn pixel_crossings(
    base: f64,
    l0: f64,
    l1: f64,
    level: &mut i64,
    c: f64,
    t0: Timestamp,
    t1: Timestamp,
) -> impl Iterator<Item = (Polarity, Timestamp)> {
    let q = (l1 - base) / c;
    let current = *level;
    let (target, polarity) = if q >= (current + 1) as f64 {
        (q.floor() as i64, Polarity::Positive)
    } else if q <= (current - 1) as f64 {
        (q.ceil() as i64, Polarity::Negative)
    } else {
        (current, Polarity::Positive)
    };
    *level = target;
    let step: i64 = if target >= current { 1 } else { -1 };
    let dl = l1 - l0;
    let dt = (t1 - t0) as f64;
    (1..=(target - current).abs()).map(move |j| {
        let crossed = base + (current + step * j) as f64 * c;
        let tau = if dl != 0.0 {
            ((crossed - l0) / dl).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let t = (t0 + (tau * dt).round() as u64).min(t1);
        (polarity, t)
    })
}

/// Frames from a directory of 8-bit PGMs whose stems are microsecond
/// timestamps, sorted by time.
pub fn read_frame_dir(dir: impl AsRef<Path>) -> Result<Vec<IntensityFrame>> {
    let dir = dir.as_ref();
    let mut files: Vec<(Timestamp, PathBuf)> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let t = timestamp_from_stem(&path)?;
        files.push((t, path));
    }
    files.sort();
    files
        .iter()
        .map(|(t, path)| IntensityFrame::from_pgm(&Pgm::read(path)?, *t))
        .collect()
}

/// Parses a zero-padded microsecond file stem such as `000050000`.
pub fn timestamp_from_stem(path: &Path) -> Result<Timestamp> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Dataset(format!("unreadable file name {}", path.display())))?;
    if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Dataset(format!(
            "file name '{}' is not a microsecond timestamp",
            path.display()
        )));
    }
    stem.parse()
        .map_err(|_| Error::Dataset(format!("timestamp in '{}' overflows", path.display())))
}
