//! Event data model, time-sorted streams and SBT/SBN slicing.
//!
//! Timestamps are integer microseconds. A stream is validated once at
//! construction (sorted, in bounds) and is immutable afterwards, so slices
//! are plain borrowed views located by binary search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Microseconds since the stream epoch.
pub type Timestamp = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_sign(p: i64) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    #[inline]
    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
    pub t: Timestamp,
}

impl Event {
    pub fn new(x: u16, y: u16, polarity: Polarity, t: Timestamp) -> Self {
        Self { x, y, polarity, t }
    }
}

/// A validated, time-sorted event sequence from a `width x height` sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates ordering and bounds. Unsorted input is rejected, never
    /// reordered.
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!(
                "sensor dimensions must be positive, got {width}x{height}"
            )));
        }
        let mut previous = 0;
        for (index, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::Bounds {
                    index,
                    x: e.x.into(),
                    y: e.y.into(),
                    width: width.into(),
                    height: height.into(),
                });
            }
            if e.t < previous {
                return Err(Error::Ordering {
                    index,
                    previous,
                    timestamp: e.t,
                });
            }
            previous = e.t;
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: u16, height: u16) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// The whole stream as a slice ending at the last timestamp.
    pub fn as_slice(&self) -> EventSlice<'_> {
        let first = self.events.first().map_or(0, |e| e.t);
        let last = self.events.last().map_or(0, |e| e.t);
        EventSlice {
            width: self.width,
            height: self.height,
            events: &self.events,
            t_end: last,
            span: last - first,
        }
    }

    /// Events with `t_d - window <= t <= t_d`, both endpoints inclusive.
    pub fn slice_sbt(&self, t_d: Timestamp, window: Timestamp) -> Result<EventSlice<'_>> {
        if window == 0 {
            return Err(Error::Parameter("SBT window must be > 0".into()));
        }
        let lo = t_d.saturating_sub(window);
        let start = self.events.partition_point(|e| e.t < lo);
        let end = self.events.partition_point(|e| e.t <= t_d);
        Ok(EventSlice {
            width: self.width,
            height: self.height,
            events: &self.events[start..end.max(start)],
            t_end: t_d,
            span: window,
        })
    }

    /// The last `count` events with `t <= t_d`. The interval runs from the
    /// first retained event to `t_d`.
    pub fn slice_sbn(&self, t_d: Timestamp, count: usize) -> Result<EventSlice<'_>> {
        if count == 0 {
            return Err(Error::Parameter("SBN count must be > 0".into()));
        }
        let end = self.events.partition_point(|e| e.t <= t_d);
        let start = end.saturating_sub(count);
        let events = &self.events[start..end];
        let first = events.first().map_or(t_d, |e| e.t);
        Ok(EventSlice {
            width: self.width,
            height: self.height,
            events,
            t_end: t_d,
            span: t_d - first,
        })
    }

    pub fn slice(&self, spec: &SliceSpec) -> Result<EventSlice<'_>> {
        match *spec {
            SliceSpec::Sbt { t_d, window } => self.slice_sbt(t_d, window),
            SliceSpec::Sbn { t_d, count } => self.slice_sbn(t_d, count),
        }
    }
}

/// How to cut a slice from a stream at a reference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SliceSpec {
    Sbt { t_d: Timestamp, window: Timestamp },
    Sbn { t_d: Timestamp, count: usize },
}

impl SliceSpec {
    pub fn sbt(t_d: Timestamp, window: Timestamp) -> Result<Self> {
        if window == 0 {
            return Err(Error::Parameter("SBT window must be > 0".into()));
        }
        Ok(SliceSpec::Sbt { t_d, window })
    }

    pub fn sbn(t_d: Timestamp, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Parameter("SBN count must be > 0".into()));
        }
        Ok(SliceSpec::Sbn { t_d, count })
    }

    pub fn reference_time(&self) -> Timestamp {
        match *self {
            SliceSpec::Sbt { t_d, .. } | SliceSpec::Sbn { t_d, .. } => t_d,
        }
    }
}

/// A borrowed window of a stream plus the interval it was cut for.
///
/// The interval is `[t_end - span, t_end]`; its start may precede the stream
/// epoch when an SBT window reaches back past zero.
#[derive(Debug, Clone, Copy)]
pub struct EventSlice<'a> {
    width: u16,
    height: u16,
    events: &'a [Event],
    t_end: Timestamp,
    span: Timestamp,
}

impl<'a> EventSlice<'a> {
    /// Builds a slice over an arbitrary sorted run of events. Used by tests
    /// and by callers that already hold a sub-slice.
    pub fn from_parts(
        width: u16,
        height: u16,
        events: &'a [Event],
        t_end: Timestamp,
        span: Timestamp,
    ) -> Self {
        Self {
            width,
            height,
            events,
            t_end,
            span,
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &'a [Event] {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn t_end(&self) -> Timestamp {
        self.t_end
    }

    pub fn span(&self) -> Timestamp {
        self.span
    }

    pub fn t_start(&self) -> i64 {
        self.t_end as i64 - self.span as i64
    }
}
