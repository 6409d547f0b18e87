//! On-disk event formats.
//!
//! CSV: a `# evcsv v1 width=<W> height=<H>` header line followed by one
//! `x,y,p,t` record per line.
//!
//! EVB (little-endian): magic `EVB1`, `u16` width, `u16` height, `u64`
//! record count, then 13-byte records of `u16 x, u16 y, i8 p, u64 t`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};

pub const EVB_MAGIC: &[u8; 4] = b"EVB1";
pub const EVB_HEADER_LEN: usize = 16;
pub const EVB_RECORD_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Evb,
}

impl EventFormat {
    /// Guesses from the file extension; anything other than `.csv` is EVB.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Evb,
        }
    }
}

impl FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(EventFormat::Csv),
            "evb" => Ok(EventFormat::Evb),
            other => Err(Error::Parameter(format!("unknown event format '{other}'"))),
        }
    }
}

pub fn read_events(path: impl AsRef<Path>, format: EventFormat) -> Result<EventStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::with_capacity(1 << 20, file);
    let result = match format {
        EventFormat::Csv => read_csv(reader),
        EventFormat::Evb => read_evb(reader),
    };
    result.map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_events(
    stream: &EventStream,
    path: impl AsRef<Path>,
    format: EventFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::with_capacity(1 << 20, file);
    match format {
        EventFormat::Csv => write_csv(stream, &mut writer),
        EventFormat::Evb => write_evb(stream, &mut writer),
    }
    .and_then(|_| writer.flush())
    .map_err(|e| Error::io(path, e))
}

fn parse_header(line: &str) -> Result<(u16, u16)> {
    let bad = || Error::Parse {
        index: 0,
        message: format!("expected '# evcsv v1 width=<W> height=<H>', got '{line}'"),
    };
    let mut parts = line.split_whitespace();
    if parts.next() != Some("#") || parts.next() != Some("evcsv") || parts.next() != Some("v1") {
        return Err(bad());
    }
    let mut width = None;
    let mut height = None;
    for part in parts {
        if let Some(v) = part.strip_prefix("width=") {
            width = v.parse::<u16>().ok();
        } else if let Some(v) = part.strip_prefix("height=") {
            height = v.parse::<u16>().ok();
        }
    }
    match (width, height) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(bad()),
    }
}

fn parse_record(line: &str, index: usize) -> Result<Event> {
    let err = |message: String| Error::Parse { index, message };
    let mut fields = line.split(',').map(str::trim);
    let mut next = |name: &str| {
        fields
            .next()
            .ok_or_else(|| err(format!("missing field '{name}' in '{line}'")))
    };
    let x = next("x")?;
    let y = next("y")?;
    let p = next("p")?;
    let t = next("t")?;
    if fields.next().is_some() {
        return Err(err(format!("too many fields in '{line}'")));
    }
    let x = x.parse::<u16>().map_err(|e| err(format!("x '{x}': {e}")))?;
    let y = y.parse::<u16>().map_err(|e| err(format!("y '{y}': {e}")))?;
    let p = p
        .parse::<i64>()
        .ok()
        .and_then(Polarity::from_sign)
        .ok_or_else(|| err(format!("polarity must be -1 or 1, got '{p}'")))?;
    let t = t.parse::<u64>().map_err(|e| err(format!("t '{t}': {e}")))?;
    Ok(Event::new(x, y, p, t))
}

/// Reads CSV events. Record indices in errors are 1-based line numbers.
pub fn read_csv<R: BufRead>(reader: R) -> Result<EventStream> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io("<csv>", e))?,
        None => {
            return Err(Error::Parse {
                index: 0,
                message: "missing header".into(),
            })
        }
    };
    let (width, height) = parse_header(header.trim())?;
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<csv>", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        events.push(parse_record(line, i + 2)?);
    }
    EventStream::new(width, height, events)
}

pub fn write_csv<W: Write>(stream: &EventStream, w: &mut W) -> std::io::Result<()> {
    writeln!(
        w,
        "# evcsv v1 width={} height={}",
        stream.width(),
        stream.height()
    )?;
    for e in stream.events() {
        writeln!(w, "{},{},{},{}", e.x, e.y, e.polarity.sign(), e.t)?;
    }
    Ok(())
}

/// Reads EVB events. Record indices in errors are 0-based record numbers.
pub fn read_evb<R: Read>(mut reader: R) -> Result<EventStream> {
    let mut header = [0u8; EVB_HEADER_LEN];
    reader.read_exact(&mut header).map_err(|e| Error::Parse {
        index: 0,
        message: format!("truncated EVB header: {e}"),
    })?;
    if &header[0..4] != EVB_MAGIC {
        return Err(Error::Parse {
            index: 0,
            message: "bad EVB magic".into(),
        });
    }
    let width = u16::from_le_bytes([header[4], header[5]]);
    let height = u16::from_le_bytes([header[6], header[7]]);
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;

    // The count is untrusted; grow the buffer as records actually arrive.
    let mut events = Vec::with_capacity(count.min(1 << 24));
    let mut record = [0u8; EVB_RECORD_LEN];
    for index in 0..count {
        reader.read_exact(&mut record).map_err(|e| Error::Parse {
            index,
            message: format!("truncated EVB record: {e}"),
        })?;
        let x = u16::from_le_bytes([record[0], record[1]]);
        let y = u16::from_le_bytes([record[2], record[3]]);
        let p = Polarity::from_sign(record[4] as i8 as i64).ok_or_else(|| Error::Parse {
            index,
            message: format!("polarity must be -1 or 1, got {}", record[4] as i8),
        })?;
        let t = u64::from_le_bytes(record[5..13].try_into().unwrap());
        events.push(Event::new(x, y, p, t));
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(|e| Error::io("<evb>", e))? != 0 {
        return Err(Error::Parse {
            index: count,
            message: "trailing bytes after declared record count".into(),
        });
    }
    EventStream::new(width, height, events)
}

pub fn write_evb<W: Write>(stream: &EventStream, w: &mut W) -> std::io::Result<()> {
    w.write_all(EVB_MAGIC)?;
    w.write_all(&stream.width().to_le_bytes())?;
    w.write_all(&stream.height().to_le_bytes())?;
    w.write_all(&(stream.len() as u64).to_le_bytes())?;
    let mut record = [0u8; EVB_RECORD_LEN];
    for e in stream.events() {
        record[0..2].copy_from_slice(&e.x.to_le_bytes());
        record[2..4].copy_from_slice(&e.y.to_le_bytes());
        record[4] = e.polarity.sign() as u8;
        record[5..13].copy_from_slice(&e.t.to_le_bytes());
        w.write_all(&record)?;
    }
    Ok(())
}
