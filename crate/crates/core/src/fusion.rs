//! Forward-only recurrent multi-scale fusion.
//!
//! A feature extractor turns each event stack into a feature pyramid. Every
//! pyramid level runs through its own ConvLSTM cell whose hidden state is
//! carried across the sequence; the enhanced maps are then fused
//! coarse-to-fine (bilinear x2 upsample, 1x1 projection, add) and a linear
//! head produces one depth channel, resized to the stack resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::raster::DepthMap;
use crate::repr::EventStack;

pub const DEFAULT_SCALES: [usize; 3] = [4, 8, 16];
pub const DEFAULT_CHANNELS: [usize; 3] = [16, 32, 64];
pub const DEFAULT_UNROLL: usize = 20;
pub const KERNEL: usize = 3;

/// Channel-major (`C x H x W`) feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Feature maps indexed by scale, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<(usize, FeatureMap)>,
}

impl FeaturePyramid {
    pub fn scales(&self) -> Vec<usize> {
        self.levels.iter().map(|(s, _)| *s).collect()
    }

    fn check_contiguous(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Shape("empty feature pyramid".into()));
        }
        for pair in self.levels.windows(2) {
            let ((s0, f0), (s1, f1)) = (&pair[0], &pair[1]);
            let (_, h0, w0) = f0.shape();
            let (_, h1, w1) = f1.shape();
            if *s1 != 2 * s0 || h0 != 2 * h1 || w0 != 2 * w1 {
                return Err(Error::Shape(format!(
                    "pyramid scales must double: {s0} ({h0}x{w0}) -> {s1} ({h1}x{w1})"
                )));
            }
        }
        Ok(())
    }
}

/// Hidden and cell state of one ConvLSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: FeatureMap,
    pub cell: FeatureMap,
}

impl LstmState {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            hidden: FeatureMap::zeros(channels, height, width),
            cell: FeatureMap::zeros(channels, height, width),
        }
    }
}

/// Per-scale recurrent state, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub levels: Vec<LstmState>,
}

impl RecurrentState {
    pub fn zeros_like(pyramid: &FeaturePyramid) -> Self {
        Self {
            levels: pyramid
                .levels
                .iter()
                .map(|(_, f)| {
                    let (c, h, w) = f.shape();
                    LstmState::zeros(c, h, w)
                })
                .collect(),
        }
    }

    pub fn max_abs_hidden(&self) -> f64 {
        self.levels
            .iter()
            .fold(0.0, |m, s| m.max(s.hidden.max_abs()))
    }
}

/// Gate convolution of a ConvLSTM over `[input, hidden]`.
///
/// Weights are `[4 * hidden][input + hidden][3][3]`, gates ordered input,
/// forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmParams {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLstmParams {
    pub fn zeros(input_channels: usize, hidden_channels: usize) -> Self {
        let cin = input_channels + hidden_channels;
        Self {
            input_channels,
            hidden_channels,
            weights: vec![0.0; 4 * hidden_channels * cin * KERNEL * KERNEL],
            bias: vec![0.0; 4 * hidden_channels],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, forget-gate bias 1.0.
    pub fn random<R: Rng>(input_channels: usize, hidden_channels: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_channels, hidden_channels);
        let fan_in = ((input_channels + hidden_channels) * KERNEL * KERNEL) as f64;
        let bound = 1.0 / fan_in.sqrt();
        for w in &mut p.weights {
            *w = rng.gen_range(-bound..bound);
        }
        p.bias[hidden_channels..2 * hidden_channels].fill(1.0);
        p
    }

    fn weight_shape(&self) -> Vec<usize> {
        vec![
            4 * self.hidden_channels,
            self.input_channels + self.hidden_channels,
            KERNEL,
            KERNEL,
        ]
    }

    fn validate(&self) -> Result<()> {
        let expected: usize = self.weight_shape().iter().product();
        if self.weights.len() != expected || self.bias.len() != 4 * self.hidden_channels {
            return Err(Error::Shape("ConvLSTM parameter sizes inconsistent".into()));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[o] += sum_c w[o][c] (*) in[c]` with a zero-padded 3x3 kernel.
fn conv3x3_accumulate(
    inputs: &[&[f64]],
    height: usize,
    width: usize,
    weights: &[f64],
    out: &mut [f64],
    out_channels: usize,
) {
    let cin = inputs.len();
    let plane = height * width;
    for o in 0..out_channels {
        let dst = &mut out[o * plane..(o + 1) * plane];
        for (c, src) in inputs.iter().enumerate() {
            let k = &weights[(o * cin + c) * 9..(o * cin + c + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let w = k[ky * 3 + kx];
                    if w == 0.0 {
                        continue;
                    }
                    // output (y, x) reads input (y + ky - 1, x + kx - 1)
                    let y0 = 1usize.saturating_sub(ky);
                    let y1 = (height + 1).saturating_sub(ky).min(height);
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (width + 1).saturating_sub(kx).min(width);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let drow = &mut dst[y * width + x0..y * width + x1];
                        let srow = &src[sy * width + x0 + kx - 1..sy * width + x1 + kx - 1];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
}

/// One ConvLSTM update. Returns the enhanced features (the new hidden state)
/// and the new state.
pub fn convlstm_step(
    input: &FeatureMap,
    state: &LstmState,
    params: &ConvLstmParams,
) -> Result<(FeatureMap, LstmState)> {
    params.validate()?;
    let (ci, h, w) = input.shape();
    let hc = params.hidden_channels;
    if ci != params.input_channels
        || state.hidden.shape() != (hc, h, w)
        || state.cell.shape() != (hc, h, w)
    {
        return Err(Error::Shape(format!(
            "ConvLSTM expects input {}x{h}x{w} and state {hc}x{h}x{w}, got input {:?}, hidden {:?}, cell {:?}",
            params.input_channels,
            input.shape(),
            state.hidden.shape(),
            state.cell.shape()
        )));
    }
    let plane = h * w;
    let mut gates = vec![0.0; 4 * hc * plane];
    for (g, b) in gates.chunks_mut(plane).zip(&params.bias) {
        g.fill(*b);
    }
    let inputs: Vec<&[f64]> = (0..ci)
        .map(|c| input.plane(c))
        .chain((0..hc).map(|c| state.hidden.plane(c)))
        .collect();
    conv3x3_accumulate(&inputs, h, w, &params.weights, &mut gates, 4 * hc);

    let mut hidden = FeatureMap::zeros(hc, h, w);
    let mut cell = FeatureMap::zeros(hc, h, w);
    for c in 0..hc {
        let i_g = &gates[c * plane..(c + 1) * plane];
        let f_g = &gates[(hc + c) * plane..(hc + c + 1) * plane];
        let o_g = &gates[(2 * hc + c) * plane..(2 * hc + c + 1) * plane];
        let g_g = &gates[(3 * hc + c) * plane..(3 * hc + c + 1) * plane];
        let prev = state.cell.plane(c);
        let cell_out = cell.plane_mut(c);
        for p in 0..plane {
            cell_out[p] = sigmoid(f_g[p]) * prev[p] + sigmoid(i_g[p]) * g_g[p].tanh();
        }
        let hid_out = hidden.plane_mut(c);
        for p in 0..plane {
            hid_out[p] = sigmoid(o_g[p]) * cell_out[p].tanh();
        }
    }
    let enhanced = hidden.clone();
    Ok((enhanced, LstmState { hidden, cell }))
}

/// Bilinear resize, half-pixel centers (align-corners off), edge clamped.
pub fn resize_bilinear(map: &FeatureMap, out_h: usize, out_w: usize) -> FeatureMap {
    let (c, h, w) = map.shape();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut out = FeatureMap::zeros(c, out_h, out_w);
    for ch in 0..c {
        let src = map.plane(ch);
        let dst = out.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample2x(map: &FeatureMap) -> FeatureMap {
    let (_, h, w) = map.shape();
    resize_bilinear(map, 2 * h, 2 * w)
}

/// 1x1 convolution: `weight` is `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Projection {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![0.0; in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn random<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_channels as f64).sqrt();
        let mut p = Self::zeros(in_channels, out_channels);
        for w in &mut p.weight {
            *w = rng.gen_range(-bound..bound);
        }
        p
    }

    pub fn apply(&self, map: &FeatureMap) -> Result<FeatureMap> {
        let (c, h, w) = map.shape();
        if c != self.in_channels
            || self.weight.len() != self.in_channels * self.out_channels
            || self.bias.len() != self.out_channels
        {
            return Err(Error::Shape(format!(
                "projection {}->{} applied to {c} channels",
                self.in_channels, self.out_channels
            )));
        }
        let mut out = FeatureMap::zeros(self.out_channels, h, w);
        for o in 0..self.out_channels {
            let dst = out.plane_mut(o);
            dst.fill(self.bias[o]);
            for i in 0..c {
                let k = self.weight[o * c + i];
                if k == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(map.plane(i)) {
                    *d += k * s;
                }
            }
        }
        Ok(out)
    }
}

/// `projections[i]` maps level `i + 1` channels onto level `i` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub projections: Vec<Projection>,
    pub head: Projection,
}

/// Coarse-to-fine fusion of enhanced maps (finest first). Returns the fused
/// map at the finest scale.
pub fn fuse(pyramid: &FeaturePyramid, params: &FusionParams) -> Result<FeatureMap> {
    pyramid.check_contiguous()?;
    let n = pyramid.levels.len();
    if params.projections.len() != n - 1 {
        return Err(Error::Shape(format!(
            "{} levels need {} projections, got {}",
            n,
            n - 1,
            params.projections.len()
        )));
    }
    let mut acc = pyramid.levels[n - 1].1.clone();
    for i in (0..n - 1).rev() {
        let projected = params.projections[i].apply(&upsample2x(&acc))?;
        let finer = &pyramid.levels[i].1;
        if projected.shape() != finer.shape() {
            return Err(Error::Shape(format!(
                "fused map {:?} does not match level {i} {:?}",
                projected.shape(),
                finer.shape()
            )));
        }
        acc = projected;
        for (a, f) in acc.data.iter_mut().zip(&finer.data) {
            *a += f;
        }
    }
    Ok(acc)
}

/// Produces a feature pyramid from an event stack.
pub trait FeatureExtractor {
    fn extract(&self, stack: &EventStack) -> Result<FeaturePyramid>;
}

/// Seeded random-projection patch embedding plus sinusoidal positional
/// encoding, one embedding per scale. A stand-in for a learned encoder.
#[derive(Debug, Clone)]
pub struct ToyExtractor {
    in_channels: usize,
    scales: Vec<usize>,
    channels: Vec<usize>,
    /// Per scale: `[out][in_channel][dy][dx]`.
    embeddings: Vec<Vec<f64>>,
}

impl ToyExtractor {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        Self::with_levels(in_channels, &DEFAULT_SCALES, &DEFAULT_CHANNELS, seed)
    }

    pub fn with_levels(in_channels: usize, scales: &[usize], channels: &[usize], seed: u64) -> Self {
        assert_eq!(scales.len(), channels.len(), "one channel count per scale");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = scales
            .iter()
            .zip(channels)
            .map(|(&s, &c)| {
                let fan_in = in_channels * s * s;
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..c * fan_in).map(|_| rng.gen_range(-bound..bound)).collect()
            })
            .collect();
        Self {
            in_channels,
            scales: scales.to_vec(),
            channels: channels.to_vec(),
            embeddings,
        }
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }
}

fn positional(c: usize, channels: usize, y: usize, x: usize) -> f64 {
    let k = (c / 4) as f64;
    let freq = 10000f64.powf(-4.0 * k / channels as f64);
    match c % 4 {
        0 => (x as f64 * freq).sin(),
        1 => (x as f64 * freq).cos(),
        2 => (y as f64 * freq).sin(),
        _ => (y as f64 * freq).cos(),
    }
}

impl FeatureExtractor for ToyExtractor {
    fn extract(&self, stack: &EventStack) -> Result<FeaturePyramid> {
        let (w, h, cin) = (stack.width(), stack.height(), stack.channels());
        if cin != self.in_channels {
            return Err(Error::Shape(format!(
                "extractor built for {} channels, stack has {cin}",
                self.in_channels
            )));
        }
        let largest = self.scales.iter().copied().max().unwrap_or(1);
        if w % largest != 0 || h % largest != 0 {
            return Err(Error::Shape(format!(
                "stack {w}x{h} not divisible by largest scale {largest}"
            )));
        }
        let values = stack.values();
        let mut levels = Vec::with_capacity(self.scales.len());
        for ((&s, &c), emb) in self.scales.iter().zip(&self.channels).zip(&self.embeddings) {
            let (fh, fw) = (h / s, w / s);
            let fan_in = cin * s * s;
            let mut map = FeatureMap::zeros(c, fh, fw);
            let mut patch = vec![0.0; fan_in];
            for py in 0..fh {
                for px in 0..fw {
                    for ch in 0..cin {
                        for dy in 0..s {
                            for dx in 0..s {
                                let (x, y) = (px * s + dx, py * s + dy);
                                patch[(ch * s + dy) * s + dx] = values[(y * w + x) * cin + ch];
                            }
                        }
                    }
                    for o in 0..c {
                        let row = &emb[o * fan_in..(o + 1) * fan_in];
                        let dot: f64 = row.iter().zip(&patch).map(|(a, b)| a * b).sum();
                        map.data[(o * fh + py) * fw + px] = dot + positional(o, c, py, px);
                    }
                }
            }
            levels.push((s, map));
        }
        Ok(FeaturePyramid { levels })
    }
}

/// Extracts a pyramid with a [`ToyExtractor`] built for this stack.
pub fn toy_extractor(stack: &EventStack, seed: u64) -> Result<FeaturePyramid> {
    ToyExtractor::new(stack.channels(), seed).extract(stack)
}

/// All parameters of the recurrent fusion model.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentFusionParams {
    pub scales: Vec<usize>,
    pub cells: Vec<ConvLstmParams>,
    pub fusion: FusionParams,
}

impl RecurrentFusionParams {
    pub fn zeros(scales: &[usize], channels: &[usize]) -> Self {
        let n = channels.len();
        Self {
            scales: scales.to_vec(),
            cells: channels.iter().map(|&c| ConvLstmParams::zeros(c, c)).collect(),
            fusion: FusionParams {
                projections: (0..n - 1)
                    .map(|i| Projection::zeros(channels[i + 1], channels[i]))
                    .collect(),
                head: Projection::zeros(channels[0], 1),
            },
        }
    }

    pub fn random(scales: &[usize], channels: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = channels.len();
        let cells = channels
            .iter()
            .map(|&c| ConvLstmParams::random(c, c, &mut rng))
            .collect();
        let projections = (0..n - 1)
            .map(|i| Projection::random(channels[i + 1], channels[i], &mut rng))
            .collect();
        let head = Projection::random(channels[0], 1, &mut rng);
        Self {
            scales: scales.to_vec(),
            cells,
            fusion: FusionParams { projections, head },
        }
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive {
            metadata: serde_json::json!({
                "scales": self.scales,
                "channels": self.cells.iter().map(|c| c.hidden_channels).collect::<Vec<_>>(),
            }),
            tensors: Vec::new(),
        };
        for (i, c) in self.cells.iter().enumerate() {
            a.push(format!("convlstm.{i}.weight"), c.weight_shape(), c.weights.clone());
            a.push(format!("convlstm.{i}.bias"), vec![c.bias.len()], c.bias.clone());
        }
        let projections = self.fusion.projections.iter().enumerate();
        let tagged = projections
            .map(|(i, p)| (format!("fusion.{i}"), p))
            .chain(std::iter::once(("head".to_string(), &self.fusion.head)));
        for (name, p) in tagged {
            a.push(
                format!("{name}.weight"),
                vec![p.out_channels, p.in_channels],
                p.weight.clone(),
            );
            a.push(format!("{name}.bias"), vec![p.out_channels], p.bias.clone());
        }
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let scales: Vec<usize> = serde_json::from_value(a.metadata["scales"].clone())?;
        let n = scales.len();
        if n == 0 {
            return Err(Error::Format("archive declares no scales".into()));
        }
        let mut cells = Vec::with_capacity(n);
        for i in 0..n {
            let w = a.get(&format!("convlstm.{i}.weight"))?;
            let b = a.get(&format!("convlstm.{i}.bias"))?;
            if w.shape.len() != 4 || w.shape[0] % 4 != 0 {
                return Err(Error::Format(format!("bad shape for convlstm.{i}.weight")));
            }
            let hc = w.shape[0] / 4;
            let cell = ConvLstmParams {
                input_channels: w.shape[1] - hc,
                hidden_channels: hc,
                weights: w.data.clone(),
                bias: b.data.clone(),
            };
            cell.validate()?;
            cells.push(cell);
        }
        let projection = |name: &str| -> Result<Projection> {
            let w = a.get(&format!("{name}.weight"))?;
            let b = a.get(&format!("{name}.bias"))?;
            if w.shape.len() != 2 {
                return Err(Error::Format(format!("bad shape for {name}.weight")));
            }
            Ok(Projection {
                in_channels: w.shape[1],
                out_channels: w.shape[0],
                weight: w.data.clone(),
                bias: b.data.clone(),
            })
        };
        let projections = (0..n - 1)
            .map(|i| projection(&format!("fusion.{i}")))
            .collect::<Result<_>>()?;
        Ok(Self {
            scales,
            cells,
            fusion: FusionParams {
                projections,
                head: projection("head")?,
            },
        })
    }
}

/// Stateful runner: feeds stacks one at a time, carrying recurrent state.
pub struct RecurrentRunner<'a, E: FeatureExtractor + ?Sized> {
    extractor: &'a E,
    params: &'a RecurrentFusionParams,
    state: Option<RecurrentState>,
    input_shape: Option<(usize, usize, usize)>,
    steps: usize,
}

impl<'a, E: FeatureExtractor + ?Sized> RecurrentRunner<'a, E> {
    pub fn new(extractor: &'a E, params: &'a RecurrentFusionParams) -> Self {
        Self {
            extractor,
            params,
            state: None,
            input_shape: None,
            steps: 0,
        }
    }

    pub fn state(&self) -> Option<&RecurrentState> {
        self.state.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn step(&mut self, stack: &EventStack) -> Result<DepthMap> {
        let shape = (stack.width(), stack.height(), stack.channels());
        match self.input_shape {
            Some(s) if s != shape => {
                return Err(Error::Shape(format!(
                    "stack shape changed mid-sequence: {s:?} -> {shape:?}"
                )))
            }
            _ => self.input_shape = Some(shape),
        }
        let pyramid = self.extractor.extract(stack)?;
        if pyramid.scales() != self.params.scales || pyramid.levels.len() != self.params.cells.len()
        {
            return Err(Error::Shape(format!(
                "extractor scales {:?} do not match parameters {:?}",
                pyramid.scales(),
                self.params.scales
            )));
        }
        let state = self
            .state
            .take()
            .unwrap_or_else(|| RecurrentState::zeros_like(&pyramid));
        let mut next = Vec::with_capacity(state.levels.len());
        let mut enhanced = Vec::with_capacity(state.levels.len());
        for (((s, features), level), cell) in pyramid
            .levels
            .iter()
            .zip(&state.levels)
            .zip(&self.params.cells)
        {
            let (out, new_state) = convlstm_step(features, level, cell)?;
            enhanced.push((*s, out));
            next.push(new_state);
        }
        self.state = Some(RecurrentState { levels: next });
        let fused = fuse(&FeaturePyramid { levels: enhanced }, &self.params.fusion)?;
        let depth = self.params.fusion.head.apply(&fused)?;
        let depth = resize_bilinear(&depth, stack.height(), stack.width());
        self.steps += 1;
        DepthMap::new(stack.width(), stack.height(), depth.data)
    }
}

/// Runs a whole sequence from zero state. Every `unroll` steps marks a
/// truncation window; forward-only, so state simply carries across it.
pub fn run_sequence<E: FeatureExtractor + ?Sized>(
    stacks: &[EventStack],
    extractor: &E,
    params: &RecurrentFusionParams,
    unroll: usize,
) -> Result<Vec<DepthMap>> {
    if unroll == 0 {
        return Err(Error::Parameter("unroll must be >= 1".into()));
    }
    let mut runner = RecurrentRunner::new(extractor, params);
    let mut out = Vec::with_capacity(stacks.len());
    for window in stacks.chunks(unroll) {
        for stack in window {
            out.push(runner.step(stack)?);
        }
    }
    Ok(out)
}
