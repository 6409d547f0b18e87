//! Dense event-stack encoders: voxel grid, image-like and Tencode.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventSlice, Polarity, Timestamp};
use crate::raster::{write_ppm, Pfm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "lowercase")]
pub enum Layout {
    Voxel { bins: usize },
    ImageLike,
    Tencode,
}

impl Layout {
    pub fn channels(&self) -> usize {
        match *self {
            Layout::Voxel { bins } => bins,
            Layout::ImageLike | Layout::Tencode => 3,
        }
    }

    pub fn encode(&self, slice: &EventSlice<'_>) -> Result<EventStack> {
        match *self {
            Layout::Voxel { bins } => encode_voxel(slice, bins),
            Layout::ImageLike => Ok(encode_image_like(slice)),
            Layout::Tencode => encode_tencode(slice),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layout::Voxel { .. } => "voxel",
            Layout::ImageLike => "imagelike",
            Layout::Tencode => "tencode",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layout::Voxel { bins } => write!(f, "voxel({bins})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Layout kind without parameters, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    Voxel,
    ImageLike,
    Tencode,
}

impl FromStr for LayoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "voxel" => Ok(LayoutKind::Voxel),
            "imagelike" | "image-like" | "image_like" => Ok(LayoutKind::ImageLike),
            "tencode" => Ok(LayoutKind::Tencode),
            other => Err(Error::Parameter(format!("unknown layout '{other}'"))),
        }
    }
}

/// A `width x height x channels` raster built from one slice.
///
/// Values are stored pixel-interleaved: index `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStack {
    width: usize,
    height: usize,
    layout: Layout,
    data: Vec<f64>,
    t_start: i64,
    t_end: Timestamp,
}

impl EventStack {
    fn zeros(slice: &EventSlice<'_>, layout: Layout) -> Self {
        let (w, h) = (slice.width() as usize, slice.height() as usize);
        Self {
            width: w,
            height: h,
            layout,
            data: vec![0.0; w * h * layout.channels()],
            t_start: slice.t_start(),
            t_end: slice.t_end(),
        }
    }

    /// Wraps raw interleaved values. Used for synthetic inputs.
    pub fn from_raw(
        width: usize,
        height: usize,
        layout: Layout,
        data: Vec<f64>,
        interval: (i64, Timestamp),
    ) -> Result<Self> {
        if data.len() != width * height * layout.channels() {
            return Err(Error::Shape(format!(
                "stack {width}x{height}x{} needs {} values, got {}",
                layout.channels(),
                width * height * layout.channels(),
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            layout,
            data,
            t_start: interval.0,
            t_end: interval.1,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn interval(&self) -> (i64, Timestamp) {
        (self.t_start, self.t_end)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels() + c]
    }

    #[inline]
    fn at_mut(&mut self, x: usize, y: usize, c: usize) -> &mut f64 {
        let ch = self.channels();
        &mut self.data[(y * self.width + x) * ch + c]
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels())
            .copied()
            .collect()
    }

    /// 8-bit RGB bytes, `round_half_up(v * 255)` clamped to `[0, 255]`.
    pub fn to_rgb8(&self) -> Result<Vec<u8>> {
        if self.channels() != 3 {
            return Err(Error::Parameter(format!(
                "RGB export needs 3 channels, stack has {}",
                self.channels()
            )));
        }
        Ok(self.data.iter().map(|&v| quantize_u8(v)).collect())
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_ppm(path, self.width, self.height, &self.to_rgb8()?)
    }

    /// Writes PFM output. Three-channel stacks go into one color PFM at
    /// `path`; other channel counts write one `Pf` file per channel named
    /// `<stem>_c<i>.pfm` next to `path`. Returns the files written.
    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let path = path.as_ref();
        if self.channels() == 3 {
            Pfm {
                width: self.width,
                height: self.height,
                channels: 3,
                data: self.data.iter().map(|&v| v as f32).collect(),
            }
            .write(path)?;
            return Ok(vec![path.to_path_buf()]);
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "stack".into());
        let dir = path.parent().unwrap_or_else(|| Path::new(""));
        let mut written = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let p = dir.join(format!("{stem}_c{c}.pfm"));
            Pfm {
                width: self.width,
                height: self.height,
                channels: 1,
                data: self.channel(c).iter().map(|&v| v as f32).collect(),
            }
            .write(&p)?;
            written.push(p);
        }
        Ok(written)
    }
}

#[inline]
fn quantize_u8(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn check_interval(slice: &EventSlice<'_>) -> Result<()> {
    if slice.span() == 0 && !slice.is_empty() {
        return Err(Error::DegenerateInterval(slice.len()));
    }
    Ok(())
}

/// Voxel grid with `bins` temporal bins.
///
/// Each event's bin coordinate is `b = (t - t_start) / (t_end - t_start) * (bins - 1)`;
/// its polarity is split between `floor(b)` and `floor(b) + 1` with weights
/// `1 - frac(b)` and `frac(b)`. An integral `b` puts the full weight in one bin.
pub fn encode_voxel(slice: &EventSlice<'_>, bins: usize) -> Result<EventStack> {
    if bins == 0 {
        return Err(Error::Parameter("voxel grid needs at least one bin".into()));
    }
    check_interval(slice)?;
    let mut stack = EventStack::zeros(slice, Layout::Voxel { bins });
    if slice.is_empty() {
        return Ok(stack);
    }
    let span = slice.span() as f64;
    let t_end = slice.t_end();
    let last = (bins - 1) as f64;
    for e in slice.events() {
        // t - t_start == span - (t_end - t), kept integral until the divide
        let offset = slice.span() - (t_end - e.t);
        let b = offset as f64 / span * last;
        let lo = b.floor();
        let frac = b - lo;
        let lo = lo as usize;
        let p = e.polarity.sign() as f64;
        let (x, y) = (e.x as usize, e.y as usize);
        if frac == 0.0 {
            *stack.at_mut(x, y, lo) += p;
        } else {
            *stack.at_mut(x, y, lo) += p * (1.0 - frac);
            *stack.at_mut(x, y, lo + 1) += p * frac;
        }
    }
    Ok(stack)
}

/// Binary polarity presence: R marks positive events, B negative, G is zero.
pub fn encode_image_like(slice: &EventSlice<'_>) -> EventStack {
    let mut stack = EventStack::zeros(slice, Layout::ImageLike);
    for e in slice.events() {
        let c = match e.polarity {
            Polarity::Positive => 0,
            Polarity::Negative => 2,
        };
        *stack.at_mut(e.x as usize, e.y as usize, c) = 1.0;
    }
    stack
}

/// Tencode: each pixel's most recent event sets `(1, g, 0)` if positive or
/// `(0, g, 1)` if negative, with `g = (t_end - t) / span`. Later records in
/// stream order overwrite earlier ones.
pub fn encode_tencode(slice: &EventSlice<'_>) -> Result<EventStack> {
    check_interval(slice)?;
    let mut stack = EventStack::zeros(slice, Layout::Tencode);
    if slice.is_empty() {
        return Ok(stack);
    }
    let span = slice.span() as f64;
    let t_end = slice.t_end();
    for e in slice.events() {
        let g = (t_end - e.t) as f64 / span;
        let (r, b) = match e.polarity {
            Polarity::Positive => (1.0, 0.0),
            Polarity::Negative => (0.0, 1.0),
        };
        let (x, y) = (e.x as usize, e.y as usize);
        *stack.at_mut(x, y, 0) = r;
        *stack.at_mut(x, y, 1) = g;
        *stack.at_mut(x, y, 2) = b;
    }
    Ok(stack)
}
