//! Independent reference implementations used as test oracles. Nothing here
//! calls into the encoder/loss code paths it is compared against.

#![allow(dead_code)]

use evdepth::{DepthMap, Event, EventSlice, Polarity, ValidMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Linear scan: `t_d - window <= t <= t_d` in signed arithmetic.
pub fn sbt_scan(events: &[Event], t_d: u64, window: u64) -> Vec<Event> {
    let lo = t_d as i128 - window as i128;
    events
        .iter()
        .filter(|e| (e.t as i128) >= lo && e.t <= t_d)
        .copied()
        .collect()
}

/// Scan for `t <= t_d`, keep the last `count`.
pub fn sbn_scan(events: &[Event], t_d: u64, count: usize) -> Vec<Event> {
    let eligible: Vec<Event> = events.iter().filter(|e| e.t <= t_d).copied().collect();
    let skip = eligible.len().saturating_sub(count);
    eligible[skip..].to_vec()
}

/// Channel-major `[c][y][x]` raster for oracle outputs.
pub struct RefStack {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RefStack {
    fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn at(&mut self, x: usize, y: usize, c: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }
}

/// Triangular-kernel voxel grid: every bin `b` receives
/// `p * max(0, 1 - |b* - b|)`.
pub fn voxel_reference(slice: &EventSlice<'_>, bins: usize) -> RefStack {
    let (w, h) = (slice.width() as usize, slice.height() as usize);
    let mut out = RefStack::new(w, h, bins);
    let t_start = slice.t_start();
    let denom = slice.t_end() as i64 - t_start;
    for e in slice.events() {
        let b_star = (e.t as i64 - t_start) as f64 / denom as f64 * (bins as f64 - 1.0);
        for b in 0..bins {
            let weight = (1.0 - (b_star - b as f64).abs()).max(0.0);
            if weight > 0.0 {
                *out.at(e.x as usize, e.y as usize, b) += e.polarity.sign() as f64 * weight;
            }
        }
    }
    out
}

/// Events grouped by pixel, in stream order.
pub fn pixel_buckets<'a>(slice: &EventSlice<'a>) -> Vec<Vec<&'a Event>> {
    let w = slice.width() as usize;
    let mut buckets = vec![Vec::new(); w * slice.height() as usize];
    for e in slice.events() {
        buckets[e.y as usize * w + e.x as usize].push(e);
    }
    buckets
}

/// Per-pixel presence over each pixel's bucket.
pub fn image_like_reference(slice: &EventSlice<'_>) -> RefStack {
    let (w, h) = (slice.width() as usize, slice.height() as usize);
    let mut out = RefStack::new(w, h, 3);
    for (i, bucket) in pixel_buckets(slice).iter().enumerate() {
        let (x, y) = (i % w, i / w);
        let pos = bucket.iter().any(|e| e.polarity == Polarity::Positive);
        let neg = bucket.iter().any(|e| e.polarity == Polarity::Negative);
        *out.at(x, y, 0) = pos as u8 as f64;
        *out.at(x, y, 2) = neg as u8 as f64;
    }
    out
}

/// Last element of each pixel's bucket.
pub fn tencode_reference(slice: &EventSlice<'_>) -> RefStack {
    let (w, h) = (slice.width() as usize, slice.height() as usize);
    let mut out = RefStack::new(w, h, 3);
    let dt = slice.span() as f64;
    for (i, bucket) in pixel_buckets(slice).iter().enumerate() {
        let (x, y) = (i % w, i / w);
        if let Some(e) = bucket.last() {
            let g = (slice.t_end() - e.t) as f64 / dt;
            let (r, b) = if e.polarity == Polarity::Positive {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            *out.at(x, y, 0) = r;
            *out.at(x, y, 1) = g;
            *out.at(x, y, 2) = b;
        }
    }
    out
}

/// Cramer's rule on raw masked sums of the 2x2 normal equations.
pub fn lstsq_oracle(pred: &DepthMap, target: &DepthMap, mask: &ValidMask) -> (f64, f64) {
    let (mut n, mut sp, mut spp, mut sd, mut spd) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        if mask.values()[i] {
            let (p, d) = (pred.values()[i], target.values()[i]);
            n += 1.0;
            sp += p;
            spp += p * p;
            sd += d;
            spd += p * d;
        }
    }
    let det = n * spp - sp * sp;
    let s = (n * spd - sp * sd) / det;
    let t = (spp * sd - sp * spd) / det;
    (s, t)
}

pub fn objective(pred: &DepthMap, target: &DepthMap, mask: &ValidMask, s: f64, t: f64) -> f64 {
    (0..pred.len())
        .filter(|&i| mask.values()[i])
        .map(|i| {
            let r = s * pred.values()[i] + t - target.values()[i];
            r * r
        })
        .sum()
}

pub fn loss_si_reference(pred: &DepthMap, target: &DepthMap, mask: &ValidMask, s: f64, t: f64) -> f64 {
    objective(pred, target, mask, s, t) / (2.0 * mask.count() as f64)
}

/// `(values, valid)` of the residual downsampled by `factor`, iterating
/// coarse cells and their blocks.
pub fn downsample_reference(
    r: &[f64],
    mask: &ValidMask,
    factor: usize,
) -> (usize, usize, Vec<f64>, Vec<bool>) {
    let (w, h) = (mask.width(), mask.height());
    let (cw, ch) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut vals = vec![0.0; cw * ch];
    let mut valid = vec![false; cw * ch];
    for cy in 0..ch {
        for cx in 0..cw {
            let (mut sum, mut n) = (0.0, 0);
            for y in cy * factor..((cy + 1) * factor).min(h) {
                for x in cx * factor..((cx + 1) * factor).min(w) {
                    if mask.get(x, y) {
                        sum += r[y * w + x];
                        n += 1;
                    }
                }
            }
            if n > 0 {
                vals[cy * cw + cx] = sum / n as f64;
                valid[cy * cw + cx] = true;
            }
        }
    }
    (cw, ch, vals, valid)
}

pub fn residual(pred: &DepthMap, target: &DepthMap, mask: &ValidMask, s: f64, t: f64) -> Vec<f64> {
    (0..pred.len())
        .map(|i| {
            if mask.values()[i] {
                s * pred.values()[i] + t - target.values()[i]
            } else {
                0.0
            }
        })
        .collect()
}

pub fn loss_reg_reference(
    pred: &DepthMap,
    target: &DepthMap,
    mask: &ValidMask,
    k_scales: usize,
    s: f64,
    t: f64,
) -> f64 {
    let r = residual(pred, target, mask, s, t);
    let mut total = 0.0;
    for k in 1..=k_scales {
        let (cw, ch, v, valid) = downsample_reference(&r, mask, 1 << (k - 1));
        let n_valid = valid.iter().filter(|&&b| b).count();
        if n_valid == 0 {
            continue;
        }
        let mut sum = 0.0;
        for y in 0..ch {
            for x in 0..cw {
                let i = y * cw + x;
                if !valid[i] {
                    continue;
                }
                if x + 1 < cw && valid[i + 1] {
                    sum += (v[i + 1] - v[i]).abs();
                }
                if y + 1 < ch && valid[i + cw] {
                    sum += (v[i + cw] - v[i]).abs();
                }
            }
        }
        total += sum / n_valid as f64;
    }
    total
}

/// Smallest `|dR_k|` among the differences that fine pixel `(px, py)`
/// participates in, over all scales.
pub fn min_kink_distance(r: &[f64], mask: &ValidMask, k_scales: usize, px: usize, py: usize) -> f64 {
    let mut best = f64::INFINITY;
    for k in 1..=k_scales {
        let f = 1 << (k - 1);
        let (cw, ch, v, valid) = downsample_reference(r, mask, f);
        let (cx, cy) = (px / f, py / f);
        let c = cy * cw + cx;
        let mut neighbours = Vec::new();
        if cx + 1 < cw {
            neighbours.push(c + 1);
        }
        if cx > 0 {
            neighbours.push(c - 1);
        }
        if cy + 1 < ch {
            neighbours.push(c + cw);
        }
        if cy > 0 {
            neighbours.push(c - cw);
        }
        for nb in neighbours {
            if valid[c] && valid[nb] {
                best = best.min((v[nb] - v[c]).abs());
            }
        }
    }
    best
}

/// Central differences of `f` at every coordinate listed in `coords`.
pub fn central_diff(
    f: impl Fn(&DepthMap) -> f64,
    at: &DepthMap,
    coords: &[usize],
    step: f64,
) -> Vec<f64> {
    let mut probe = at.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + step;
            let plus = f(&probe);
            probe.values_mut()[i] = orig - step;
            let minus = f(&probe);
            probe.values_mut()[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps exact zeros and
/// rounding-level values from dominating.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

pub fn random_depth(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> DepthMap {
    DepthMap::from_fn(w, h, |_, _| rng.gen_range(lo..hi))
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p_valid: f64) -> ValidMask {
    loop {
        let bits: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(p_valid)).collect();
        if bits.iter().filter(|&&b| b).count() >= 2 {
            return ValidMask::new(w, h, bits).unwrap();
        }
    }
}

/// Random sorted stream with duplicated timestamps and repeated pixels.
pub fn random_events(rng: &mut ChaCha8Rng, w: u16, h: u16, n: usize, t_max: u64) -> Vec<Event> {
    let mut ts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..=t_max)).collect();
    ts.sort_unstable();
    ts.into_iter()
        .map(|t| {
            let p = if rng.gen_bool(0.5) {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            Event::new(rng.gen_range(0..w), rng.gen_range(0..h), p, t)
        })
        .collect()
}

/// Closed-form single-pixel LSTM step.
pub fn scalar_lstm(x: f64, h: f64, c: f64, wx: [f64; 4], wh: [f64; 4], b: [f64; 4]) -> (f64, f64) {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let pre = |g: usize| wx[g] * x + wh[g] * h + b[g];
    let (i, f, o, g) = (sig(pre(0)), sig(pre(1)), sig(pre(2)), pre(3).tanh());
    let c2 = f * c + i * g;
    (o * c2.tanh(), c2)
}

/// Largest element-wise difference between an encoder output and a reference.
pub fn max_diff(stack: &evdepth::EventStack, reference: &RefStack) -> f64 {
    assert_eq!(
        (stack.width(), stack.height(), stack.channels()),
        (reference.width, reference.height, reference.channels)
    );
    let mut worst = 0.0f64;
    for c in 0..reference.channels {
        for y in 0..reference.height {
            for x in 0..reference.width {
                worst = worst.max((stack.get(x, y, c) - reference.get(x, y, c)).abs());
            }
        }
    }
    worst
}

/// Random SBT or SBN slice of `events` (alternating by `i`).
pub fn random_slice<'a>(
    rng: &mut ChaCha8Rng,
    stream: &'a evdepth::EventStream,
    t_max: u64,
    i: usize,
) -> EventSlice<'a> {
    let t_d = rng.gen_range(0..=t_max);
    if i.is_multiple_of(2) {
        let window = rng.gen_range(1..=t_max / 2 + 1);
        stream.slice_sbt(t_d, window).unwrap()
    } else {
        let count = rng.gen_range(1..=stream.len().max(1) + 10);
        stream.slice_sbn(t_d, count).unwrap()
    }
}
