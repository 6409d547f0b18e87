//! Depth evaluation: optional least-squares pre-alignment followed by the
//! standard error and accuracy metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, Shaped, ValidMask};
use crate::supervision::lstsq_align;

pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];
pub const DEFAULT_CLAMP: (f64, f64) = (1e-3, f64::INFINITY);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub align: bool,
    /// Applied to predictions before any metric is computed.
    pub clamp: (f64, f64),
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            align: true,
            clamp: DEFAULT_CLAMP,
        }
    }
}

/// Running sums from which every metric can be recomputed, so that reports
/// can be pooled across frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSums {
    pub n: u64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub sq_err: f64,
    pub log_diff: f64,
    pub log_diff_sq: f64,
    pub delta_hits: [u64; 3],
}

impl MetricSums {
    fn push(&mut self, p: f64, g: f64) {
        let diff = p - g;
        let d = p.ln() - g.ln();
        self.n += 1;
        self.abs_rel += diff.abs() / g;
        self.sq_rel += diff * diff / g;
        self.sq_err += diff * diff;
        self.log_diff += d;
        self.log_diff_sq += d * d;
        let ratio = (p / g).max(g / p);
        for (hits, &thr) in self.delta_hits.iter_mut().zip(&DELTA_THRESHOLDS) {
            if ratio < thr {
                *hits += 1;
            }
        }
    }

    fn merge(&mut self, other: &MetricSums) {
        self.n += other.n;
        self.abs_rel += other.abs_rel;
        self.sq_rel += other.sq_rel;
        self.sq_err += other.sq_err;
        self.log_diff += other.log_diff;
        self.log_diff_sq += other.log_diff_sq;
        for (a, b) in self.delta_hits.iter_mut().zip(&other.delta_hits) {
            *a += b;
        }
    }

    fn finish(&self, aligned: bool) -> MetricsReport {
        let n = self.n as f64;
        let mean_d = self.log_diff / n;
        let mean_d2 = self.log_diff_sq / n;
        MetricsReport {
            abs_rel: self.abs_rel / n,
            sq_rel: self.sq_rel / n,
            rmse: (self.sq_err / n).sqrt(),
            rmse_log: mean_d2.sqrt(),
            si_log: (mean_d2 - mean_d * mean_d).max(0.0).sqrt(),
            delta1: self.delta_hits[0] as f64 / n,
            delta2: self.delta_hits[1] as f64 / n,
            delta3: self.delta_hits[2] as f64 / n,
            n_valid: self.n,
            aligned,
            sums: *self,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub si_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: u64,
    pub aligned: bool,
    pub sums: MetricSums,
}

pub fn evaluate(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: &ValidMask,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    if pred.dims() != gt.dims() || pred.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "pred {:?}, gt {:?} and mask {:?} must agree",
            pred.dims(),
            gt.dims(),
            mask.dims()
        )));
    }
    let (lo, hi) = options.clamp;
    if lo.is_nan() || lo <= 0.0 || hi.is_nan() || hi < lo {
        return Err(Error::Parameter(format!(
            "clamp range must satisfy 0 < min <= max, got [{lo}, {hi}]"
        )));
    }
    for (&g, &m) in gt.values().iter().zip(mask.values()) {
        if m && !(g > 0.0 && g.is_finite()) {
            return Err(Error::Domain(format!(
                "ground truth must be positive on valid pixels, found {g}"
            )));
        }
    }
    let affine = if options.align {
        Some(lstsq_align(pred, gt, mask)?)
    } else {
        let n = mask.count();
        if n == 0 {
            return Err(Error::InsufficientSupport {
                required: 1,
                found: 0,
            });
        }
        None
    };
    let mut sums = MetricSums::default();
    for ((&p, &g), &m) in pred.values().iter().zip(gt.values()).zip(mask.values()) {
        if !m {
            continue;
        }
        let p = affine.map_or(p, |a| a.apply(p));
        if !p.is_finite() {
            return Err(Error::Domain("non-finite prediction at a valid pixel".into()));
        }
        sums.push(p.clamp(lo, hi), g);
    }
    Ok(sums.finish(options.align))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-frame metrics.
    PerFrame,
    /// Metrics recomputed from pixels pooled across frames.
    PerPixel,
}

pub fn aggregate(reports: &[MetricsReport], mode: Aggregation) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InsufficientInput("cannot aggregate zero reports".into()))?;
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    let aligned = reports.iter().all(|r| r.aligned);
    let mut pooled = MetricSums::default();
    for r in reports {
        pooled.merge(&r.sums);
    }
    match mode {
        Aggregation::PerPixel => Ok(pooled.finish(aligned)),
        Aggregation::PerFrame => {
            let k = reports.len() as f64;
            let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
            Ok(MetricsReport {
                abs_rel: mean(|r| r.abs_rel),
                sq_rel: mean(|r| r.sq_rel),
                rmse: mean(|r| r.rmse),
                rmse_log: mean(|r| r.rmse_log),
                si_log: mean(|r| r.si_log),
                delta1: mean(|r| r.delta1),
                delta2: mean(|r| r.delta2),
                delta3: mean(|r| r.delta3),
                n_valid: pooled.n,
                aligned,
                sums: pooled,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub name: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

/// JSON document: one object per frame plus the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub aggregation: Aggregation,
    pub frames: Vec<FrameMetrics>,
    pub aggregate: MetricsReport,
}

impl MetricsDocument {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("name,abs_rel,sq_rel,rmse,rmse_log,si_log,delta1,delta2,delta3,n_valid,aligned\n");
        let rows = self
            .frames
            .iter()
            .map(|f| (f.name.as_str(), &f.metrics))
            .chain(std::iter::once(("aggregate", &self.aggregate)));
        for (name, m) in rows {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{},{},{}",
                m.abs_rel,
                m.sq_rel,
                m.rmse,
                m.rmse_log,
                m.si_log,
                m.delta1,
                m.delta2,
                m.delta3,
                m.n_valid,
                m.aligned
            );
        }
        out
    }
}
