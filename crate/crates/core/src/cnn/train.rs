//! Cross-entropy SGD training and the false-negative mining loop.
//!
//! Batch gradients are accumulated over a fixed number of contiguous
//! sample chunks that may run in parallel; the chunk results are reduced
//! in chunk order, so training is bit-reproducible regardless of the
//! worker count.

use super::{
    apply_layer, axpy, forward_patch, ConvParams, FcParams, Layer, NetError, Network, NetworkMode,
    Tensor,
};
use crate::dataset::{LabeledPatch, PatchClass};
use crate::raster::{subtract_mean, MeanImage, RasterError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Fixed gradient-accumulation fan-out; part of the reproducible reduction
/// order, not a tuning knob.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_per_round: usize,
    pub mining_rounds: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs_per_round: 10,
            mining_rounds: 5,
            batch_size: 32,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NetError> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(NetError::BadConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.epochs_per_round == 0 {
            return Err(NetError::BadConfig("epochs_per_round must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NetError::BadConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Epoch budget of a full run: the mining loop trains
    /// `epochs_per_round` epochs in each of `mining_rounds` rounds, and
    /// the plain trainer uses the same total so the two are comparable.
    pub fn total_epochs(&self) -> usize {
        self.epochs_per_round * self.mining_rounds.max(1)
    }
}

/// One patch ready for the engine: centered pixels plus its class.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Tensor,
    pub class: PatchClass,
}

impl TrainSample {
    pub fn from_patch(patch: &LabeledPatch) -> TrainSample {
        TrainSample {
            input: Tensor::from_raster(&patch.pixels),
            class: patch.label,
        }
    }
}

/// Subtracts the mean image from every patch, yielding centered copies.
pub fn center_patches(
    patches: &[LabeledPatch],
    mean: &MeanImage,
) -> Result<Vec<LabeledPatch>, RasterError> {
    patches
        .iter()
        .map(|p| {
            Ok(LabeledPatch {
                pixels: subtract_mean(&p.pixels, mean)?,
                ..p.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
struct ParamGrad {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Per-layer weight and bias gradients, aligned with the network's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn zeroed(net: &Network) -> Gradients {
        Gradients {
            layers: net
                .layers()
                .iter()
                .map(|l| match l {
                    Layer::Conv(p) => Some(ParamGrad {
                        weights: vec![0.0; p.weights.len()],
                        bias: vec![0.0; p.bias.len()],
                    }),
                    Layer::FullyConnected(p) => Some(ParamGrad {
                        weights: vec![0.0; p.weights.len()],
                        bias: vec![0.0; p.bias.len()],
                    }),
                    _ => None,
                })
                .collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                axpy(1.0, &b.weights, &mut a.weights);
                axpy(1.0, &b.bias, &mut a.bias);
            }
        }
    }

    pub fn weight_grads(&self, layer: usize) -> Option<(&[f64], &[f64])> {
        self.layers[layer]
            .as_ref()
            .map(|g| (g.weights.as_slice(), g.bias.as_slice()))
    }
}

struct ForwardCache {
    /// `activations[i]` is the input to layer `i`; the last entry is the
    /// softmax output.
    activations: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

fn forward_cached(net: &Network, input: &Tensor) -> ForwardCache {
    let mut activations = Vec::with_capacity(net.layers().len() + 1);
    let mut argmax: Vec<Option<Vec<usize>>> = Vec::with_capacity(net.layers().len());
    activations.push(input.clone());
    for layer in net.layers() {
        let is_pool = matches!(layer, Layer::MaxPool(_));
        let mut am = if is_pool { Some(Vec::new()) } else { None };
        let out = apply_layer(layer, activations.last().unwrap(), am.as_mut());
        argmax.push(am);
        activations.push(out);
    }
    ForwardCache { activations, argmax }
}

fn conv1x1_backward(
    p: &ConvParams,
    input: &Tensor,
    dy: &Tensor,
    dx: &mut Tensor,
    grad: &mut ParamGrad,
) {
    let (cin, cout) = (p.in_ch, p.out_ch);
    for pix in 0..input.h * input.w {
        let xin = &input.data[pix * cin..(pix + 1) * cin];
        let dxp = &mut dx.data[pix * cin..(pix + 1) * cin];
        let dyp = &dy.data[pix * cout..(pix + 1) * cout];
        for (o, &g) in dyp.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * cin..(o + 1) * cin;
            axpy(g, xin, &mut grad.weights[row.clone()]);
            axpy(g, &p.weights[row], dxp);
        }
    }
}

fn conv_backward(
    p: &ConvParams,
    input: &Tensor,
    dy: &Tensor,
    dx: &mut Tensor,
    grad: &mut ParamGrad,
) {
    if p.kernel_h == 1 && p.kernel_w == 1 && p.stride == 1 && p.pad == 0 {
        return conv1x1_backward(p, input, dy, dx, grad);
    }
    for oy in 0..dy.h {
        let base_y = (oy * p.stride) as isize - p.pad as isize;
        for ox in 0..dy.w {
            let base_x = (ox * p.stride) as isize - p.pad as isize;
            for o in 0..p.out_ch {
                let g = dy.data[(oy * dy.w + ox) * dy.c + o];
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
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
                        axpy(g, &input.data[ii..ii + p.in_ch], &mut grad.weights[wi..wi + p.in_ch]);
                        axpy(g, &p.weights[wi..wi + p.in_ch], &mut dx.data[ii..ii + p.in_ch]);
                    }
                }
            }
        }
    }
}

fn fc_backward(p: &FcParams, input: &Tensor, dy: &Tensor, dx: &mut Tensor, grad: &mut ParamGrad) {
    for o in 0..p.out_dim {
        let g = dy.data[o];
        if g == 0.0 {
            continue;
        }
        grad.bias[o] += g;
        let row = o * p.in_dim..(o + 1) * p.in_dim;
        axpy(g, &input.data, &mut grad.weights[row.clone()]);
        axpy(g, &p.weights[row], &mut dx.data);
    }
}

/// Backpropagates one sample, adding its parameter gradients into `grads`.
/// Returns the sample's cross-entropy loss.
fn backward_sample(net: &Network, cache: &ForwardCache, class: PatchClass, grads: &mut Gradients) -> f64 {
    let probs = cache.activations.last().unwrap();
    let loss = -probs.data[class.index()].ln();

    // Softmax fused with cross-entropy: the gradient at the logits is
    // p - onehot, so the backward walk starts below the softmax layer.
    let mut dcur = probs.clone();
    dcur.data[class.index()] -= 1.0;

    for i in (0..net.layers().len() - 1).rev() {
        let input = &cache.activations[i];
        let layer = &net.layers()[i];
        let mut dx = Tensor::zeros(input.h, input.w, input.c);
        match layer {
            Layer::Conv(p) => {
                conv_backward(p, input, &dcur, &mut dx, grads.layers[i].as_mut().unwrap())
            }
            Layer::FullyConnected(p) => {
                fc_backward(p, input, &dcur, &mut dx, grads.layers[i].as_mut().unwrap())
            }
            Layer::ReLU => {
                for (j, slot) in dx.data.iter_mut().enumerate() {
                    if input.data[j] > 0.0 {
                        *slot = dcur.data[j];
                    }
                }
            }
            Layer::MaxPool(_) => {
                let argmax = cache.argmax[i].as_ref().expect("pool cache");
                for (oidx, &iidx) in argmax.iter().enumerate() {
                    dx.data[iidx] += dcur.data[oidx];
                }
            }
            Layer::Flatten => {
                dx.data.copy_from_slice(&dcur.data);
            }
            Layer::Softmax => unreachable!("softmax handled by the fused loss gradient"),
        }
        dcur = dx;
    }
    loss
}

/// Summed (not averaged) gradients and loss over a slice of samples.
pub fn batch_gradients(net: &Network, samples: &[&TrainSample]) -> (Gradients, f64) {
    let mut grads = Gradients::zeroed(net);
    let mut loss = 0.0;
    for sample in samples {
        let cache = forward_cached(net, &sample.input);
        loss += backward_sample(net, &cache, sample.class, &mut grads);
    }
    (grads, loss)
}

fn batch_gradients_chunked(net: &Network, samples: &[&TrainSample]) -> (Gradients, f64) {
    if samples.len() < 2 * GRAD_CHUNKS {
        return batch_gradients(net, samples);
    }
    let chunk = samples.len().div_ceil(GRAD_CHUNKS);
    let parts: Vec<(Gradients, f64)> = samples
        .par_chunks(chunk)
        .map(|part| batch_gradients(net, part))
        .collect();
    let mut iter = parts.into_iter();
    let (mut grads, mut loss) = iter.next().unwrap();
    for (g, l) in iter {
        grads.add(&g);
        loss += l;
    }
    (grads, loss)
}

fn apply_update(net: &mut Network, grads: &Gradients, scale: f64) {
    for (layer, grad) in net.layers_mut().iter_mut().zip(&grads.layers) {
        let Some(grad) = grad else { continue };
        let (weights, bias) = match layer {
            Layer::Conv(p) => (&mut p.weights, &mut p.bias),
            Layer::FullyConnected(p) => (&mut p.weights, &mut p.bias),
            _ => continue,
        };
        axpy(-scale, &grad.weights, weights);
        axpy(-scale, &grad.bias, bias);
    }
}

fn check_patch_shapes(net: &Network, data: &[LabeledPatch]) -> Result<(), NetError> {
    let expected = (net.input_patch(), net.input_patch(), net.input_channels());
    for patch in data {
        let got = patch.pixels.shape();
        if (got.1, got.0, got.2) != expected {
            return Err(NetError::ShapeMismatch { expected, got });
        }
    }
    Ok(())
}

fn train_epochs(
    net: &mut Network,
    samples: &[TrainSample],
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    epoch_base: usize,
) -> Result<Vec<f64>, NetError> {
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&TrainSample> = batch.iter().map(|&i| &samples[i]).collect();
            let (grads, loss) = batch_gradients_chunked(net, &refs);
            total_loss += loss;
            apply_update(net, &grads, cfg.learning_rate / refs.len() as f64);
        }
        let mean = total_loss / n as f64;
        if !mean.is_finite() {
            return Err(NetError::Diverged {
                epoch: epoch_base + epoch,
                loss: mean,
            });
        }
        history.push(mean);
    }
    Ok(history)
}

/// Minibatch SGD on cross-entropy for the full epoch budget
/// (`epochs_per_round * mining_rounds`, matching a mining run without the
/// pool additions). Patches must already be mean-subtracted. Returns the
/// per-epoch mean loss.
pub fn sgd_train(
    net: &mut Network,
    data: &[LabeledPatch],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, NetError> {
    cfg.validate()?;
    if net.mode() != NetworkMode::Patch {
        return Err(NetError::NotPatchMode);
    }
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    check_patch_shapes(net, data)?;
    let samples: Vec<TrainSample> = data.iter().map(TrainSample::from_patch).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    train_epochs(net, &samples, cfg.total_epochs(), cfg, &mut rng, 0)
}

/// Built-labeled pool patches the model currently scores below 0.5.
pub fn evaluate_false_negatives(net: &Network, pool: &[LabeledPatch]) -> Result<Vec<usize>, NetError> {
    let mut out = Vec::new();
    for (i, patch) in pool.iter().enumerate() {
        if patch.label != PatchClass::Built {
            continue;
        }
        let (_, p_built) = forward_patch(net, &patch.pixels)?;
        if p_built < 0.5 {
            out.push(i);
        }
    }
    Ok(out)
}

/// Fraction of built patches scored at or above 0.5.
pub fn recall(net: &Network, patches: &[LabeledPatch]) -> Result<f64, NetError> {
    let mut built = 0usize;
    let mut hit = 0usize;
    for patch in patches {
        if patch.label != PatchClass::Built {
            continue;
        }
        built += 1;
        let (_, p_built) = forward_patch(net, &patch.pixels)?;
        if p_built >= 0.5 {
            hit += 1;
        }
    }
    if built == 0 {
        return Err(NetError::NoBuiltInPool);
    }
    Ok(hit as f64 / built as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub false_negatives: usize,
    pub train_size: usize,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MiningLog {
    pub rounds: Vec<RoundLog>,
}

/// Trains in rounds, re-testing the pool after each round and appending
/// every false negative back into the training set (duplicates allowed, so
/// the training set grows monotonically). The RNG stream runs across
/// rounds, making a mining run with an inert pool identical to
/// [`sgd_train`] with the same seed.
pub fn hard_negative_mine(
    net: &mut Network,
    train: &mut Vec<LabeledPatch>,
    pool: &[LabeledPatch],
    cfg: &TrainConfig,
) -> Result<MiningLog, NetError> {
    cfg.validate()?;
    if net.mode() != NetworkMode::Patch {
        return Err(NetError::NotPatchMode);
    }
    if train.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    if !pool.iter().any(|p| p.label == PatchClass::Built) {
        return Err(NetError::NoBuiltInPool);
    }
    check_patch_shapes(net, train)?;
    check_patch_shapes(net, pool)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut log = MiningLog::default();
    for round in 0..cfg.mining_rounds.max(1) {
        let samples: Vec<TrainSample> = train.iter().map(TrainSample::from_patch).collect();
        let epoch_losses = train_epochs(
            net,
            &samples,
            cfg.epochs_per_round,
            cfg,
            &mut rng,
            round * cfg.epochs_per_round,
        )?;
        let false_negatives = evaluate_false_negatives(net, pool)?;
        for &idx in &false_negatives {
            train.push(pool[idx].clone());
        }
        log.rounds.push(RoundLog {
            round,
            false_negatives: false_negatives.len(),
            train_size: train.len(),
            epoch_losses,
        });
    }
    Ok(log)
}
