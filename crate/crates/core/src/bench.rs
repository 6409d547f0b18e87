//! Encoder throughput measurement and synthetic stream generation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};
use crate::repr::{EventStack, Layout};

/// Uniformly random events over `[0, duration_us]`, sorted by time.
pub fn random_stream(
    width: u16,
    height: u16,
    count: usize,
    duration_us: u64,
    seed: u64,
) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts: Vec<u64> = (0..count).map(|_| rng.gen_range(0..=duration_us)).collect();
    ts.sort_unstable();
    let events = ts
        .into_iter()
        .map(|t| {
            let p = if rng.gen::<bool>() {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            Event::new(rng.gen_range(0..width), rng.gen_range(0..height), p, t)
        })
        .collect();
    EventStream::new(width, height, events).expect("generated stream is valid by construction")
}

/// SHA-256 over the little-endian bytes of every stack value.
pub fn stack_digest(stack: &EventStack) -> String {
    let mut h = Sha256::new();
    for v in stack.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Peak resident set size in KiB, where the platform exposes it.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.split_whitespace().next()?.parse().ok())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutBench {
    pub layout: String,
    pub events: usize,
    pub samples_s: Vec<f64>,
    pub median_s: f64,
    pub events_per_sec: f64,
    pub digests: Vec<String>,
    pub deterministic: bool,
    pub peak_rss_kib: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub events: usize,
    pub width: u16,
    pub height: u16,
    pub repetitions: usize,
    pub layouts: Vec<LayoutBench>,
}

fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Encodes the whole stream as one slice `repetitions` times per layout.
pub fn bench_encoders(
    stream: &EventStream,
    layouts: &[Layout],
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Parameter("repetitions must be >= 1".into()));
    }
    let slice = stream.as_slice();
    let mut results = Vec::with_capacity(layouts.len());
    for layout in layouts {
        let mut samples = Vec::with_capacity(repetitions);
        let mut digests = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            let stack = layout.encode(&slice)?;
            samples.push(start.elapsed().as_secs_f64());
            digests.push(stack_digest(&stack));
        }
        let median_s = median(&samples);
        results.push(LayoutBench {
            layout: layout.to_string(),
            events: stream.len(),
            events_per_sec: stream.len() as f64 / median_s.max(1e-12),
            deterministic: digests.windows(2).all(|w| w[0] == w[1]),
            samples_s: samples,
            median_s,
            digests,
            peak_rss_kib: peak_rss_kib(),
        });
    }
    Ok(BenchReport {
        events: stream.len(),
        width: stream.width(),
        height: stream.height(),
        repetitions,
        layouts: results,
    })
}
