//! Minimal CPU convolutional network engine.
//!
//! A [`Network`] is an ordered layer list in one of two modes. Patch mode
//! classifies one fixed-size patch through a flattening head; dense mode is
//! the same classifier with every fully connected layer re-expressed as a
//! convolution ([`convolutionalize`]), which scores every output-stride cell
//! of an arbitrarily sized input in one shared pass ([`dense_infer`]).
//!
//! There is deliberately no batch-normalization layer kind, and canonical
//! form forbids a ReLU directly before the softmax.

mod serial;
mod train;

pub use serial::{read_network, read_network_file, write_network, write_network_file};
pub use train::{
    batch_gradients, center_patches, evaluate_false_negatives, hard_negative_mine, recall,
    sgd_train, Gradients, MiningLog, RoundLog, TrainConfig, TrainSample,
};

use crate::raster::{Raster, RasterError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("operation requires a patch-mode network")]
    NotPatchMode,
    #[error("operation requires a dense-mode network")]
    NotDenseMode,
    #[error("network is not in canonical form: {0}")]
    NonCanonical(String),
    #[error("area {0}x{1} is smaller than one {2}x{2} patch")]
    AreaTooSmall(usize, usize, usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("mining pool contains no built-labeled patches")]
    NoBuiltInPool,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("bad train config: {0}")]
    BadConfig(String),
    #[error("model container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Row-major `(height, width, channels)` activation carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Tensor {
        Tensor {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_raster(r: &Raster) -> Tensor {
        Tensor {
            h: r.height(),
            w: r.width(),
            c: r.channels(),
            data: r.values().to_vec(),
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub pad: usize,
    /// Layout `[out][ky][kx][in]`, matching row-major flatten order so the
    /// fully-connected conversion is a pure reshape.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxPoolParams {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Layout `[out][in]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvParams),
    ReLU,
    MaxPool(MaxPoolParams),
    Flatten,
    FullyConnected(FcParams),
    Softmax,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "Conv",
            Layer::ReLU => "ReLU",
            Layer::MaxPool(_) => "MaxPool",
            Layer::Flatten => "Flatten",
            Layer::FullyConnected(_) => "FullyConnected",
            Layer::Softmax => "Softmax",
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv(p) => p.weights.len() + p.bias.len(),
            Layer::FullyConnected(p) => p.weights.len() + p.bias.len(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkMode {
    Patch,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    mode: NetworkMode,
    input_patch: usize,
    input_channels: usize,
    output_stride: usize,
    /// Spatial shape entering the flatten layer (patch mode only).
    flatten_shape: Option<(usize, usize, usize)>,
}

impl Network {
    /// Validates canonical form and infers the mode from the layer list.
    ///
    /// Patch mode: `Conv/ReLU/MaxPool`* `Flatten` (`FullyConnected/ReLU`)*
    /// ending in `Softmax`. Dense mode: `Conv/ReLU/MaxPool`* ending in
    /// `Softmax`, with no flatten and no fully connected layer. In both,
    /// the layer before the softmax must not be a ReLU.
    pub fn new(layers: Vec<Layer>, input_patch: usize) -> Result<Network, NetError> {
        if layers.len() < 2 {
            return Err(NetError::NonCanonical("too few layers".into()));
        }
        if !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(NetError::NonCanonical("last layer must be Softmax".into()));
        }
        if matches!(layers[layers.len() - 2], Layer::ReLU) {
            return Err(NetError::NonCanonical(
                "a ReLU must not immediately precede the Softmax".into(),
            ));
        }
        let input_channels = match layers.first() {
            Some(Layer::Conv(p)) => p.in_ch,
            _ => {
                return Err(NetError::NonCanonical(
                    "first layer must be a Conv so input channels are known".into(),
                ))
            }
        };
        let flatten_count = layers.iter().filter(|l| matches!(l, Layer::Flatten)).count();
        let mode = match flatten_count {
            0 => NetworkMode::Dense,
            1 => NetworkMode::Patch,
            n => {
                return Err(NetError::NonCanonical(format!(
                    "{n} flatten layers; at most one is allowed"
                )))
            }
        };
        let mut seen_flatten = false;
        for (i, layer) in layers.iter().enumerate() {
            let last = i + 1 == layers.len();
            match layer {
                Layer::Flatten => seen_flatten = true,
                Layer::FullyConnected(_) => {
                    if !seen_flatten {
                        return Err(NetError::NonCanonical(
                            "fully connected layer before the flatten".into(),
                        ));
                    }
                }
                Layer::Conv(_) | Layer::MaxPool(_) => {
                    if seen_flatten {
                        return Err(NetError::NonCanonical(format!(
                            "{} after the flatten",
                            layer.kind_name()
                        )));
                    }
                }
                Layer::Softmax => {
                    if !last {
                        return Err(NetError::NonCanonical("Softmax before the last layer".into()));
                    }
                }
                Layer::ReLU => {}
            }
        }

        let mut net = Network {
            layers,
            mode,
            input_patch,
            input_channels,
            output_stride: 1,
            flatten_shape: None,
        };
        // Shape walk doubles as the structural validation.
        let (stride, flatten_shape) = net.walk_shapes(input_patch, input_patch)?;
        net.output_stride = stride;
        net.flatten_shape = flatten_shape;
        Ok(net)
    }

    fn walk_shapes(
        &self,
        in_h: usize,
        in_w: usize,
    ) -> Result<(usize, Option<(usize, usize, usize)>), NetError> {
        let mut h = in_h;
        let mut w = in_w;
        let mut c = self.input_channels;
        let mut flat: Option<usize> = None;
        let mut stride = 1usize;
        let mut flatten_shape = None;
        for layer in &self.layers {
            match layer {
                Layer::Conv(p) => {
                    if flat.is_some() {
                        return Err(NetError::NonCanonical("conv after flatten".into()));
                    }
                    if p.in_ch != c {
                        return Err(NetError::NonCanonical(format!(
                            "conv expects {} input channels, got {c}",
                            p.in_ch
                        )));
                    }
                    if p.weights.len() != p.kernel_h * p.kernel_w * p.in_ch * p.out_ch
                        || p.bias.len() != p.out_ch
                    {
                        return Err(NetError::NonCanonical("conv weight count mismatch".into()));
                    }
                    if p.stride == 0 || p.kernel_h == 0 || p.kernel_w == 0 {
                        return Err(NetError::NonCanonical("conv with zero extent".into()));
                    }
                    if h + 2 * p.pad < p.kernel_h || w + 2 * p.pad < p.kernel_w {
                        return Err(NetError::NonCanonical("conv kernel larger than input".into()));
                    }
                    h = (h + 2 * p.pad - p.kernel_h) / p.stride + 1;
                    w = (w + 2 * p.pad - p.kernel_w) / p.stride + 1;
                    c = p.out_ch;
                    stride *= p.stride;
                }
                Layer::MaxPool(p) => {
                    if p.size == 0 || p.stride == 0 || h < p.size || w < p.size {
                        return Err(NetError::NonCanonical("pool larger than input".into()));
                    }
                    h = (h - p.size) / p.stride + 1;
                    w = (w - p.size) / p.stride + 1;
                    stride *= p.stride;
                }
                Layer::Flatten => {
                    flatten_shape = Some((h, w, c));
                    flat = Some(h * w * c);
                }
                Layer::FullyConnected(p) => {
                    let dim = flat.ok_or_else(|| {
                        NetError::NonCanonical("fully connected before flatten".into())
                    })?;
                    if p.in_dim != dim {
                        return Err(NetError::NonCanonical(format!(
                            "fully connected expects {} inputs, flatten provides {dim}",
                            p.in_dim
                        )));
                    }
                    if p.weights.len() != p.in_dim * p.out_dim || p.bias.len() != p.out_dim {
                        return Err(NetError::NonCanonical("fc weight count mismatch".into()));
                    }
                    flat = Some(p.out_dim);
                }
                Layer::ReLU | Layer::Softmax => {}
            }
        }
        Ok((stride, flatten_shape))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn mode(&self) -> NetworkMode {
        self.mode
    }

    pub fn input_patch(&self) -> usize {
        self.input_patch
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Spacing in input pixels between adjacent dense-inference scores;
    /// the product of all conv and pool strides.
    pub fn output_stride(&self) -> usize {
        self.output_stride
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }
}

/// Builds the default patch classifier: three 1x1 conv + ReLU + 2x2 pool
/// feature stages (so each score depends on exactly one 64x64 window and
/// dense inference reproduces the patch classifier bit-for-bit at every
/// location), then the three-layer fully connected head.
pub fn toy_network(seed: u64) -> Network {
    toy_family(16, 32, 64, 256, 128, seed)
}

/// Same layout with configurable widths; `c3` feeds an `8*8*c3` flatten.
pub fn toy_family(c1: usize, c2: usize, c3: usize, f1: usize, f2: usize, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = MaxPoolParams { size: 2, stride: 2 };
    let layers = vec![
        Layer::Conv(conv_init(1, 1, 3, c1, 1, 0, &mut rng)),
        Layer::ReLU,
        Layer::MaxPool(pool),
        Layer::Conv(conv_init(1, 1, c1, c2, 1, 0, &mut rng)),
        Layer::ReLU,
        Layer::MaxPool(pool),
        Layer::Conv(conv_init(1, 1, c2, c3, 1, 0, &mut rng)),
        Layer::ReLU,
        Layer::MaxPool(pool),
        Layer::Flatten,
        Layer::FullyConnected(fc_init(8 * 8 * c3, f1, &mut rng)),
        Layer::ReLU,
        Layer::FullyConnected(fc_init(f1, f2, &mut rng)),
        Layer::ReLU,
        Layer::FullyConnected(fc_init(f2, 2, &mut rng)),
        Layer::Softmax,
    ];
    Network::new(layers, 64).expect("toy family is canonical")
}

pub fn conv_init(
    kernel_h: usize,
    kernel_w: usize,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    pad: usize,
    rng: &mut ChaCha8Rng,
) -> ConvParams {
    let fan_in = (kernel_h * kernel_w * in_ch) as f64;
    let fan_out = (kernel_h * kernel_w * out_ch) as f64;
    let limit = (6.0 / (fan_in + fan_out)).sqrt();
    let weights = (0..kernel_h * kernel_w * in_ch * out_ch)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    ConvParams {
        kernel_h,
        kernel_w,
        in_ch,
        out_ch,
        stride,
        pad,
        weights,
        bias: vec![0.0; out_ch],
    }
}

pub fn fc_init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> FcParams {
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-limit..limit)).collect();
    FcParams {
        in_dim,
        out_dim,
        weights,
        bias: vec![0.0; out_dim],
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n4 = a.len() & !3;
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a[..n4].chunks_exact(4).zip(b[..n4].chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a[n4..].iter().zip(&b[n4..]) {
        sum += x * y;
    }
    sum
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn conv_out_dims(p: &ConvParams, h: usize, w: usize) -> (usize, usize) {
    (
        (h + 2 * p.pad - p.kernel_h) / p.stride + 1,
        (w + 2 * p.pad - p.kernel_w) / p.stride + 1,
    )
}

// Dense inference convolves whole scenes; fan wide jobs across rows.
const CONV_PAR_MULS: usize = 8_000_000;

/// Pointwise convolutions dominate patch training; this path skips the
/// window bookkeeping of the general case.
fn conv1x1_forward(p: &ConvParams, input: &Tensor) -> Tensor {
    let (cin, cout) = (p.in_ch, p.out_ch);
    let mut out = Tensor::zeros(input.h, input.w, cout);
    let row_len = input.w * cout;
    let compute_row = |y: usize, row: &mut [f64]| {
        let src = &input.data[y * input.w * cin..(y + 1) * input.w * cin];
        for x in 0..input.w {
            let xin = &src[x * cin..(x + 1) * cin];
            let dst = &mut row[x * cout..(x + 1) * cout];
            for (o, slot) in dst.iter_mut().enumerate() {
                *slot = p.bias[o] + dot(&p.weights[o * cin..(o + 1) * cin], xin);
            }
        }
    };
    if input.h * input.w * cin * cout >= CONV_PAR_MULS {
        out.data
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(y, row)| compute_row(y, row));
    } else {
        for (y, row) in out.data.chunks_mut(row_len).enumerate() {
            compute_row(y, row);
        }
    }
    out
}

pub(crate) fn conv_forward(p: &ConvParams, input: &Tensor) -> Tensor {
    if p.kernel_h == 1 && p.kernel_w == 1 && p.stride == 1 && p.pad == 0 {
        return conv1x1_forward(p, input);
    }
    let (out_h, out_w) = conv_out_dims(p, input.h, input.w);
    let mut out = Tensor::zeros(out_h, out_w, p.out_ch);
    let muls = out_h * out_w * p.out_ch * p.kernel_h * p.kernel_w * p.in_ch;
    let row_len = out_w * p.out_ch;
    let compute_row = |oy: usize, row: &mut [f64]| {
        for ox in 0..out_w {
            let base_y = (oy * p.stride) as isize - p.pad as isize;
            let base_x = (ox * p.stride) as isize - p.pad as isize;
            for o in 0..p.out_ch {
                let mut sum = p.bias[o];
                for ky in 0..p.kernel_h {
                    let iy = base_y + ky as isize;
                    if iy < 0 || iy >= input.h as isize {
                        continue;
                    }
                    for kx in 0..p.kernel_w {
                        let ix = base_x + kx as isize;
                        if ix < 0 || ix >= input.w as isize {
                            continue;
                        }
                        let wi = ((o * p.kernel_h + ky) * p.kernel_w + kx) * p.in_ch;
                        let ii = (iy as usize * input.w + ix as usize) * input.c;
                        sum += dot(&p.weights[wi..wi + p.in_ch], &input.data[ii..ii + p.in_ch]);
                    }
                }
                row[ox * p.out_ch + o] = sum;
            }
        }
    };
    if muls >= CONV_PAR_MULS {
        out.data
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(oy, row)| compute_row(oy, row));
    } else {
        for (oy, row) in out.data.chunks_mut(row_len).enumerate() {
            compute_row(oy, row);
        }
    }
    out
}

pub(crate) fn relu_forward(input: &Tensor) -> Tensor {
    Tensor {
        h: input.h,
        w: input.w,
        c: input.c,
        data: input.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

pub(crate) fn maxpool_forward(
    p: &MaxPoolParams,
    input: &Tensor,
    mut argmax: Option<&mut Vec<usize>>,
) -> Tensor {
    let out_h = (input.h - p.size) / p.stride + 1;
    let out_w = (input.w - p.size) / p.stride + 1;
    let mut out = Tensor::zeros(out_h, out_w, input.c);
    if let Some(am) = argmax.as_deref_mut() {
        am.clear();
        am.resize(out_h * out_w * input.c, 0);
    }
    for oy in 0..out_h {
        for ox in 0..out_w {
            for ch in 0..input.c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..p.size {
                    for dx in 0..p.size {
                        let idx =
                            ((oy * p.stride + dy) * input.w + ox * p.stride + dx) * input.c + ch;
                        let v = input.data[idx];
                        // Strict comparison keeps the first maximum in scan
                        // order, which makes backprop tie-breaking stable.
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let oidx = (oy * out_w + ox) * input.c + ch;
                out.data[oidx] = best;
                if let Some(am) = argmax.as_deref_mut() {
                    am[oidx] = best_idx;
                }
            }
        }
    }
    out
}

pub(crate) fn fc_forward(p: &FcParams, input: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, 1, p.out_dim);
    for o in 0..p.out_dim {
        out.data[o] = p.bias[o] + dot(&p.weights[o * p.in_dim..(o + 1) * p.in_dim], &input.data);
    }
    out
}

/// Softmax across channels at every spatial location.
pub(crate) fn softmax_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for loc in out.data.chunks_mut(input.c) {
        let max = loc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in loc.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in loc.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub(crate) fn apply_layer(layer: &Layer, input: &Tensor, argmax: Option<&mut Vec<usize>>) -> Tensor {
    match layer {
        Layer::Conv(p) => conv_forward(p, input),
        Layer::ReLU => relu_forward(input),
        Layer::MaxPool(p) => maxpool_forward(p, input, argmax),
        Layer::Flatten => Tensor {
            h: 1,
            w: 1,
            c: input.h * input.w * input.c,
            data: input.data.clone(),
        },
        Layer::FullyConnected(p) => fc_forward(p, input),
        Layer::Softmax => softmax_forward(input),
    }
}

/// Runs the full layer stack on one input tensor.
pub fn forward(net: &Network, input: &Tensor) -> Result<Tensor, NetError> {
    if input.c != net.input_channels {
        return Err(NetError::ShapeMismatch {
            expected: (net.input_patch, net.input_patch, net.input_channels),
            got: input.shape(),
        });
    }
    let mut current = input.clone();
    for layer in &net.layers {
        current = apply_layer(layer, &current, None);
    }
    Ok(current)
}

/// Classifies one centered patch: returns `(p_nonbuilt, p_built)`.
pub fn forward_patch(net: &Network, patch: &Raster) -> Result<(f64, f64), NetError> {
    if net.mode != NetworkMode::Patch {
        return Err(NetError::NotPatchMode);
    }
    let expected = (net.input_patch, net.input_patch, net.input_channels);
    if (patch.height(), patch.width(), patch.channels()) != expected {
        return Err(NetError::ShapeMismatch {
            expected,
            got: (patch.height(), patch.width(), patch.channels()),
        });
    }
    let out = forward(net, &Tensor::from_raster(patch))?;
    if out.data.len() != 2 {
        return Err(NetError::NonCanonical(format!(
            "classifier head produces {} outputs, expected 2",
            out.data.len()
        )));
    }
    Ok((out.data[0], out.data[1]))
}

/// Rewrites every fully connected layer as a convolution: the first becomes
/// a kernel covering the entire pre-flatten spatial extent, later ones
/// become 1x1 convolutions. Weights are reinterpreted in place, so the
/// parameter count and the exact weight values are unchanged.
pub fn convolutionalize(net: &Network) -> Result<Network, NetError> {
    if net.mode != NetworkMode::Patch {
        return Err(NetError::NotPatchMode);
    }
    let (fh, fw, fc) = net
        .flatten_shape
        .ok_or_else(|| NetError::NonCanonical("patch network without flatten shape".into()))?;
    let mut layers = Vec::with_capacity(net.layers.len() - 1);
    let mut first_fc = true;
    for layer in &net.layers {
        match layer {
            Layer::Flatten => {}
            Layer::FullyConnected(p) => {
                let (kh, kw, in_ch) = if first_fc {
                    first_fc = false;
                    (fh, fw, fc)
                } else {
                    (1, 1, p.in_dim)
                };
                // [out][in] and [out][ky][kx][ci] agree element-for-element
                // because the flatten order is (y, x, channel) row-major.
                layers.push(Layer::Conv(ConvParams {
                    kernel_h: kh,
                    kernel_w: kw,
                    in_ch,
                    out_ch: p.out_dim,
                    stride: 1,
                    pad: 0,
                    weights: p.weights.clone(),
                    bias: p.bias.clone(),
                }));
            }
            other => layers.push(other.clone()),
        }
    }
    Network::new(layers, net.input_patch)
}

/// Scores every output-stride cell of a centered area with one shared
/// forward pass; returns the built-class probability map.
pub fn dense_infer(net: &Network, area: &Raster) -> Result<Raster, NetError> {
    if net.mode != NetworkMode::Dense {
        return Err(NetError::NotDenseMode);
    }
    if area.width() < net.input_patch || area.height() < net.input_patch {
        return Err(NetError::AreaTooSmall(
            area.width(),
            area.height(),
            net.input_patch,
        ));
    }
    let out = forward(net, &Tensor::from_raster(area))?;
    if out.c != 2 {
        return Err(NetError::NonCanonical(format!(
            "dense head produces {} channels, expected 2",
            out.c
        )));
    }
    let values = out.data.chunks_exact(2).map(|pair| pair[1]).collect();
    Ok(Raster::new(out.w, out.h, 1, values)?)
}

/// Brute-force sliding-window scorer: one `forward_patch` per window. This
/// is the independent route dense inference is checked against.
pub fn sliding_infer(net: &Network, area: &Raster, stride: usize) -> Result<Raster, NetError> {
    if net.mode != NetworkMode::Patch {
        return Err(NetError::NotPatchMode);
    }
    if stride == 0 {
        return Err(NetError::BadConfig("stride must be positive".into()));
    }
    let patch = net.input_patch;
    if area.width() < patch || area.height() < patch {
        return Err(NetError::AreaTooSmall(area.width(), area.height(), patch));
    }
    let out_w = (area.width() - patch) / stride + 1;
    let out_h = (area.height() - patch) / stride + 1;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(out_h);
    for _ in 0..out_h {
        rows.push(vec![0.0; out_w]);
    }
    let results: Result<Vec<Vec<f64>>, NetError> = (0..out_h)
        .into_par_iter()
        .map(|oy| {
            let mut row = vec![0.0; out_w];
            for (ox, slot) in row.iter_mut().enumerate() {
                let window = area.crop(ox * stride, oy * stride, patch)?;
                let (_, p_built) = forward_patch(net, &window)?;
                *slot = p_built;
            }
            Ok(row)
        })
        .collect();
    let values: Vec<f64> = results?.into_iter().flatten().collect();
    Ok(Raster::new(out_w, out_h, 1, values)?)
}
