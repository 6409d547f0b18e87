//! Affine-invariant supervision: least-squares scale/shift alignment, the
//! scale-invariant loss, multi-scale gradient regularization, and their
//! analytic gradients with respect to the prediction.
//!
//! Gradients hold the solved `(s, t)` fixed. For the scale-invariant term this
//! is the exact total derivative (the alignment residual is orthogonal to
//! `pred` and to the constant image at the optimum). For the regularizer it
//! is an approximation: the dependence of `(s, t)` on `pred` is dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, Shaped, ValidMask};

pub const DEFAULT_LAMBDA: f64 = 0.25;
pub const DEFAULT_K_SCALES: usize = 4;

/// Relative threshold on the prediction variance below which the normal
/// equations are treated as singular.
const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub s: f64,
    pub t: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams { s: 1.0, t: 0.0 };

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        self.s * v + self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Solve `(s, t)` per sample by least squares.
    LeastSquares,
    /// Use the given parameters as-is (identity for metric-depth training).
    Fixed(AffineParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub k_scales: usize,
    pub alignment: Alignment,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            k_scales: DEFAULT_K_SCALES,
            alignment: Alignment::LeastSquares,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_si: f64,
    pub l_reg: f64,
    pub total: f64,
    pub lambda: f64,
    pub k_scales: usize,
    pub affine: AffineParams,
    /// 1-based scales that had no valid pixels and contributed 0.
    pub empty_scales: Vec<usize>,
}

fn check_inputs(pred: &DepthMap, target: &DepthMap, mask: &ValidMask) -> Result<usize> {
    if pred.dims() != target.dims() || pred.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "pred {:?}, target {:?} and mask {:?} must agree",
            pred.dims(),
            target.dims(),
            mask.dims()
        )));
    }
    let mut n = 0;
    for ((&p, &d), &m) in pred.values().iter().zip(target.values()).zip(mask.values()) {
        if m {
            if !(p.is_finite() && d.is_finite()) {
                return Err(Error::Domain("non-finite depth at a valid pixel".into()));
            }
            n += 1;
        }
    }
    if n < 2 {
        return Err(Error::InsufficientSupport {
            required: 2,
            found: n,
        });
    }
    Ok(n)
}

fn masked<'a>(
    pred: &'a DepthMap,
    target: &'a DepthMap,
    mask: &'a ValidMask,
) -> impl Iterator<Item = (f64, f64)> + Clone + 'a {
    pred.values()
        .iter()
        .zip(target.values())
        .zip(mask.values())
        .filter(|(_, &m)| m)
        .map(|((&p, &d), _)| (p, d))
}

/// `argmin_{s,t} sum_M (s * pred + t - target)^2`.
///
/// A (numerically) constant prediction falls back to `s = 1` and
/// `t = mean_M(target - pred)`.
pub fn lstsq_align(pred: &DepthMap, target: &DepthMap, mask: &ValidMask) -> Result<AffineParams> {
    let n = check_inputs(pred, target, mask)? as f64;
    Ok(solve_affine(masked(pred, target, mask), n))
}

fn solve_affine<I>(pairs: I, n: f64) -> AffineParams
where
    I: Iterator<Item = (f64, f64)> + Clone,
{
    let (sum_p, sum_d) = pairs
        .clone()
        .fold((0.0, 0.0), |(a, b), (p, d)| (a + p, b + d));
    let (mean_p, mean_d) = (sum_p / n, sum_d / n);
    let (mut var, mut cov, mut sq) = (0.0, 0.0, 0.0);
    for (p, d) in pairs {
        let dp = p - mean_p;
        var += dp * dp;
        cov += dp * (d - mean_d);
        sq += p * p;
    }
    // var is n times the population variance, i.e. det(normal matrix) / n.
    if var / n <= DEGENERATE_VARIANCE * (sq / n) {
        return AffineParams {
            s: 1.0,
            t: mean_d - mean_p,
        };
    }
    let s = cov / var;
    AffineParams {
        s,
        t: mean_d - s * mean_p,
    }
}

fn resolve(
    alignment: Alignment,
    pred: &DepthMap,
    target: &DepthMap,
    mask: &ValidMask,
) -> Result<AffineParams> {
    match alignment {
        Alignment::LeastSquares => lstsq_align(pred, target, mask),
        Alignment::Fixed(a) => {
            check_inputs(pred, target, mask)?;
            Ok(a)
        }
    }
}

/// A scalar loss term and its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub gradient: DepthMap,
    pub affine: AffineParams,
}

/// `1 / (2|M|) * sum_M (s * pred + t - target)^2` with least-squares `(s, t)`.
pub fn loss_si(pred: &DepthMap, target: &DepthMap, mask: &ValidMask) -> Result<LossTerm> {
    let affine = lstsq_align(pred, target, mask)?;
    loss_si_with(pred, target, mask, affine)
}

/// The scale-invariant loss at caller-provided `(s, t)`.
pub fn loss_si_with(
    pred: &DepthMap,
    target: &DepthMap,
    mask: &ValidMask,
    affine: AffineParams,
) -> Result<LossTerm> {
    let n = check_inputs(pred, target, mask)? as f64;
    let mut grad = DepthMap::filled(pred.width(), pred.height(), 0.0);
    let mut sum = 0.0;
    for (i, g) in grad.values_mut().iter_mut().enumerate() {
        if mask.values()[i] {
            let r = affine.apply(pred.values()[i]) - target.values()[i];
            sum += r * r;
            *g = affine.s * r / n;
        }
    }
    Ok(LossTerm {
        value: sum / (2.0 * n),
        gradient: grad,
        affine,
    })
}

/// Gradient-matching regularizer over `k_scales` factor-2 scales.
#[derive(Debug, Clone, PartialEq)]
pub struct RegTerm {
    pub value: f64,
    pub gradient: DepthMap,
    pub affine: AffineParams,
    pub empty_scales: Vec<usize>,
}

pub fn loss_reg(
    pred: &DepthMap,
    target: &DepthMap,
    mask: &ValidMask,
    k_scales: usize,
) -> Result<RegTerm> {
    let affine = lstsq_align(pred, target, mask)?;
    loss_reg_with(pred, target, mask, k_scales, affine)
}

/// Residual pyramid level: masked block means of the residual plus the
/// number of valid fine pixels behind each coarse pixel.
struct Level {
    width: usize,
    height: usize,
    factor: usize,
    values: Vec<f64>,
    support: Vec<u32>,
}

impl Level {
    fn build(residual: &[f64], mask: &[bool], width: usize, height: usize, factor: usize) -> Self {
        let cw = width.div_ceil(factor);
        let ch = height.div_ceil(factor);
        let mut values = vec![0.0; cw * ch];
        let mut support = vec![0u32; cw * ch];
        for y in 0..height {
            let row = (y / factor) * cw;
            for x in 0..width {
                let i = y * width + x;
                if mask[i] {
                    let c = row + x / factor;
                    values[c] += residual[i];
                    support[c] += 1;
                }
            }
        }
        for (v, &n) in values.iter_mut().zip(&support) {
            if n > 0 {
                *v /= n as f64;
            }
        }
        Self {
            width: cw,
            height: ch,
            factor,
            values,
            support,
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `sum_k 1/|M_k| * sum_{M_k} (|dx R_k| + |dy R_k|)` at caller-provided `(s, t)`.
///
/// `R_k` is the masked block mean of `R = s * pred + t - target` over
/// `2^(k-1)`-sized blocks; a coarse pixel is valid when any pixel in its block
/// is. Forward differences count only where both pixels are valid.
pub fn loss_reg_with(
    pred: &DepthMap,
    target: &DepthMap,
    mask: &ValidMask,
    k_scales: usize,
    affine: AffineParams,
) -> Result<RegTerm> {
    check_inputs(pred, target, mask)?;
    if k_scales == 0 {
        return Err(Error::Parameter("k_scales must be >= 1".into()));
    }
    let (w, h) = pred.dims();
    let m = mask.values();
    let residual: Vec<f64> = pred
        .values()
        .iter()
        .zip(target.values())
        .zip(m)
        .map(|((&p, &d), &valid)| if valid { affine.apply(p) - d } else { 0.0 })
        .collect();

    let mut value = 0.0;
    let mut grad_r = vec![0.0; w * h];
    let mut empty_scales = Vec::new();
    for k in 1..=k_scales {
        let factor = 1usize << (k - 1);
        let level = Level::build(&residual, m, w, h, factor);
        let valid = level.support.iter().filter(|&&n| n > 0).count();
        if valid == 0 {
            empty_scales.push(k);
            continue;
        }
        let norm = 1.0 / valid as f64;
        let (cw, chh) = (level.width, level.height);
        let mut coarse_grad = vec![0.0; cw * chh];
        let mut sum = 0.0;
        for y in 0..chh {
            for x in 0..cw {
                let c = y * cw + x;
                if level.support[c] == 0 {
                    continue;
                }
                if x + 1 < cw && level.support[c + 1] > 0 {
                    let d = level.values[c + 1] - level.values[c];
                    sum += d.abs();
                    let sg = sign(d);
                    coarse_grad[c + 1] += sg;
                    coarse_grad[c] -= sg;
                }
                if y + 1 < chh && level.support[c + cw] > 0 {
                    let d = level.values[c + cw] - level.values[c];
                    sum += d.abs();
                    let sg = sign(d);
                    coarse_grad[c + cw] += sg;
                    coarse_grad[c] -= sg;
                }
            }
        }
        value += norm * sum;
        // Back through the block mean: each valid fine pixel gets 1/n of its
        // coarse pixel's gradient.
        for y in 0..h {
            let row = (y / level.factor) * cw;
            for x in 0..w {
                let i = y * w + x;
                if m[i] {
                    let c = row + x / level.factor;
                    grad_r[i] += norm * coarse_grad[c] / level.support[c] as f64;
                }
            }
        }
    }

    let gradient = DepthMap::new(w, h, grad_r.into_iter().map(|g| affine.s * g).collect())?;
    Ok(RegTerm {
        value,
        gradient,
        affine,
        empty_scales,
    })
}

/// `L = L_si + lambda * L_reg` with a single alignment shared by both terms.
pub fn loss_total(
    pred: &DepthMap,
    target: &DepthMap,
    mask: &ValidMask,
    config: &LossConfig,
) -> Result<(LossReport, DepthMap)> {
    let affine = resolve(config.alignment, pred, target, mask)?;
    loss_total_with(pred, target, mask, config, affine)
}

pub fn loss_total_with(
    pred: &DepthMap,
    target: &DepthMap,
    mask: &ValidMask,
    config: &LossConfig,
    affine: AffineParams,
) -> Result<(LossReport, DepthMap)> {
    let si = loss_si_with(pred, target, mask, affine)?;
    let reg = loss_reg_with(pred, target, mask, config.k_scales, affine)?;
    let lambda = config.lambda;
    let total = si.value + lambda * reg.value;
    let mut gradient = si.gradient;
    for (g, r) in gradient.values_mut().iter_mut().zip(reg.gradient.values()) {
        *g += lambda * r;
    }
    Ok((
        LossReport {
            l_si: si.value,
            l_reg: reg.value,
            total,
            lambda,
            k_scales: config.k_scales,
            affine,
            empty_scales: reg.empty_scales,
        },
        gradient,
    ))
}
