//! Depth rasters, validity masks, and the image formats used to move them
//! around: PFM (float), PGM (8/16-bit gray) and PPM (8-bit RGB).
//!
//! All in-memory rasters are row-major, top row first. PFM stores rows
//! bottom-to-top; the reader and writer flip accordingly.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel depth, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "depth map {width}x{height} needs {} values, got {}",
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

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
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

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Returns `a * self + b` elementwise.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| a * v + b).collect(),
        }
    }

    pub fn same_shape<T: Shaped>(&self, other: &T) -> bool {
        self.width == other.dims().0 && self.height == other.dims().1
    }

    pub fn read_pfm(path: impl AsRef<Path>) -> Result<Self> {
        let pfm = Pfm::read(path)?;
        if pfm.channels != 1 {
            return Err(Error::Format(format!(
                "depth PFM must have 1 channel, found {}",
                pfm.channels
            )));
        }
        Ok(Self {
            width: pfm.width,
            height: pfm.height,
            data: pfm.data.iter().map(|&v| v as f64).collect(),
        })
    }

    /// Writes a single-channel PFM. Values are narrowed to `f32`.
    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        Pfm {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
        .write(path)
    }

    /// Writes a 16-bit PGM of `round(depth / scale)` plus a JSON sidecar
    /// (`<path>.json`) recording the scale. Non-finite or negative depths are
    /// stored as 0.
    pub fn write_pgm16(&self, path: impl AsRef<Path>, scale_m_per_unit: f64) -> Result<()> {
        if !(scale_m_per_unit > 0.0 && scale_m_per_unit.is_finite()) {
            return Err(Error::Parameter(format!(
                "scale_m_per_unit must be positive, got {scale_m_per_unit}"
            )));
        }
        let path = path.as_ref();
        let data = self
            .data
            .iter()
            .map(|&d| {
                if d.is_finite() && d > 0.0 {
                    (d / scale_m_per_unit).round().min(65535.0) as u16
                } else {
                    0
                }
            })
            .collect();
        Pgm {
            width: self.width,
            height: self.height,
            maxval: 65535,
            data,
        }
        .write(path)?;
        let sidecar = DepthScale { scale_m_per_unit };
        let sidecar_path = sidecar_path(path);
        fs::write(&sidecar_path, serde_json::to_vec(&sidecar)?)
            .map_err(|e| Error::io(sidecar_path, e))
    }

    pub fn read_pgm16(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar_path = sidecar_path(path);
        let bytes = fs::read(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        let scale: DepthScale = serde_json::from_slice(&bytes)?;
        let pgm = Pgm::read(path)?;
        Ok(Self {
            width: pgm.width,
            height: pgm.height,
            data: pgm
                .data
                .iter()
                .map(|&v| v as f64 * scale.scale_m_per_unit)
                .collect(),
        })
    }
}

/// JSON sidecar for 16-bit depth PGMs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DepthScale {
    pub scale_m_per_unit: f64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub trait Shaped {
    fn dims(&self) -> (usize, usize);
}

impl Shaped for DepthMap {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Shaped for ValidMask {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Per-pixel validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ValidMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "mask {width}x{height} needs {} values, got {}",
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

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    /// Valid where the depth is finite and strictly positive.
    pub fn from_depth(depth: &DepthMap) -> Self {
        Self {
            width: depth.width,
            height: depth.height,
            data: depth
                .values()
                .iter()
                .map(|&d| d.is_finite() && d > 0.0)
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &ValidMask) -> Result<ValidMask> {
        if self.dims() != other.dims() {
            return Err(Error::Shape("mask dimensions differ".into()));
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    /// 8-bit PGM, any nonzero value is valid.
    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let pgm = Pgm::read(path)?;
        Ok(Self {
            width: pgm.width,
            height: pgm.height,
            data: pgm.data.iter().map(|&v| v != 0).collect(),
        })
    }

    /// 8-bit PGM, 255 for valid and 0 for invalid.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        Pgm {
            width: self.width,
            height: self.height,
            maxval: 255,
            data: self.data.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        }
        .write(path)
    }
}

/// A Portable Float Map: 1 (`Pf`) or 3 (`PF`) interleaved `f32` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, top row first, channels interleaved.
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut header = HeaderReader::new(bytes);
        let magic = header.token()?;
        let channels = match magic.as_str() {
            "Pf" => 1,
            "PF" => 3,
            other => return Err(Error::Format(format!("bad PFM magic '{other}'"))),
        };
        let width = header.usize_token()?;
        let height = header.usize_token()?;
        let scale: f64 = header
            .token()?
            .parse()
            .map_err(|e| Error::Format(format!("bad PFM scale: {e}")))?;
        let little_endian = scale < 0.0;
        let body = header.body()?;
        let n = width * height * channels;
        if body.len() != n * 4 {
            return Err(Error::Format(format!(
                "PFM body has {} bytes, expected {}",
                body.len(),
                n * 4
            )));
        }
        let row_len = width * channels;
        let mut data = vec![0f32; n];
        for (file_row, chunk) in body.chunks_exact(row_len * 4).enumerate() {
            let y = height - 1 - file_row;
            for (i, b) in chunk.chunks_exact(4).enumerate() {
                let raw = [b[0], b[1], b[2], b[3]];
                data[y * row_len + i] = if little_endian {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Little-endian encoding, scale field `-1.0`.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => return Err(Error::Format(format!("PFM supports 1 or 3 channels, not {c}"))),
        };
        let n = self.width * self.height * self.channels;
        if self.data.len() != n {
            return Err(Error::Shape(format!(
                "PFM data has {} values, expected {n}",
                self.data.len()
            )));
        }
        let header = format!("{magic}\n{} {}\n-1.0\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + n * 4);
        out.extend_from_slice(header.as_bytes());
        let row_len = self.width * self.channels;
        for y in (0..self.height).rev() {
            for v in &self.data[y * row_len..(y + 1) * row_len] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }
}

/// Binary (P5) graymap with 8- or 16-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Pgm {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut header = HeaderReader::new(bytes);
        let magic = header.token()?;
        if magic != "P5" {
            return Err(Error::Format(format!("expected P5 graymap, got '{magic}'")));
        }
        let width = header.usize_token()?;
        let height = header.usize_token()?;
        let maxval = header.usize_token()?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!("bad PGM maxval {maxval}")));
        }
        let body = header.body()?;
        let n = width * height;
        let data: Vec<u16> = if maxval < 256 {
            if body.len() != n {
                return Err(Error::Format(format!(
                    "PGM body has {} bytes, expected {n}",
                    body.len()
                )));
            }
            body.iter().map(|&b| b as u16).collect()
        } else {
            if body.len() != 2 * n {
                return Err(Error::Format(format!(
                    "PGM body has {} bytes, expected {}",
                    body.len(),
                    2 * n
                )));
            }
            body.chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect()
        };
        Ok(Self {
            width,
            height,
            maxval: maxval as u16,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.data.iter().map(|&v| v as u8));
        } else {
            for v in &self.data {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

/// Writes an 8-bit binary (P6) pixmap from interleaved RGB bytes.
pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape(format!(
            "PPM {width}x{height} needs {} bytes, got {}",
            width * height * 3,
            rgb.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{width} {height}\n255\n")
        .and_then(|_| w.write_all(rgb))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit P6 pixmap, returning `(width, height, rgb)`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut header = HeaderReader::new(&bytes);
    let magic = header.token()?;
    if magic != "P6" {
        return Err(Error::Format(format!("expected P6 pixmap, got '{magic}'")));
    }
    let width = header.usize_token()?;
    let height = header.usize_token()?;
    let maxval = header.usize_token()?;
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit PPM supported, maxval {maxval}")));
    }
    let body = header.body()?;
    if body.len() != width * height * 3 {
        return Err(Error::Format("PPM body size mismatch".into()));
    }
    Ok((width, height, body.to_vec()))
}

/// Whitespace/comment tokenizer for netpbm-style headers. After the last
/// header token exactly one whitespace byte separates header and body.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn token(&mut self) -> Result<String> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated header".into())),
            }
        }
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn usize_token(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Format(format!("expected integer in header, got '{tok}'")))
    }

    fn body(self) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(Error::Format("missing header terminator".into())),
        }
    }
}
