//! Contrastive MLP encoder and the supervised classifier built on it.
//!
//! The encoder is a trunk `d -> h -> h -> e` (ReLU after the two hidden
//! layers) followed by a linear projection head `e -> p`. The trunk output is
//! the penultimate feature used for similarity graphs; the L2-normalized
//! projection feeds the NT-Xent loss.

pub mod nn;
mod ntxent;

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::rng::SprRng;
use crate::{Error, Result};
pub use nn::Dense;
pub use ntxent::ntxent_loss;

const RELU_LAYERS: usize = 2;
const TRUNK_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EncoderDims {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
    pub projection: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            input: 16,
            hidden: 64,
            embed: 32,
            projection: 16,
        }
    }
}

/// Self-supervised training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub temperature: f64,
    pub epochs: usize,
    /// Samples per minibatch drawn from the delayed buffer.
    pub batch_delayed: usize,
    /// Samples per minibatch drawn from the purified buffer.
    pub batch_purified: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Standard deviation of the additive Gaussian jitter.
    pub aug_noise: f64,
    /// Probability of zeroing each coordinate of a view.
    pub mask_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            epochs: 10,
            batch_delayed: 32,
            batch_purified: 32,
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            aug_noise: 0.1,
            mask_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::param("temperature", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(Error::param("mask_fraction", "must lie in [0, 1]"));
        }
        if !(self.aug_noise.is_finite() && self.aug_noise >= 0.0) {
            return Err(Error::param("aug_noise", "must be non-negative"));
        }
        if self.batch_delayed + self.batch_purified < 2 {
            return Err(Error::param(
                "batch_delayed",
                "batch_delayed + batch_purified must be at least 2",
            ));
        }
        Ok(())
    }
}

/// Supervised finetuning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

/// Output of [`EncoderParams::embed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub penultimate: Vec<f64>,
    pub projected_unit: Vec<f64>,
}

fn check_input(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::ContractViolation(format!(
            "input has dimension {}, network expects {dim}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::ContractViolation("input contains a non-finite value".into()));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Trunk plus projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Dense>,
}

impl EncoderParams {
    pub fn init(dims: EncoderDims, seed: u64) -> Self {
        let mut rng = SprRng::seed_from_u64(seed);
        let layers = alloc::vec![
            Dense::init(dims.input, dims.hidden, &mut rng),
            Dense::init(dims.hidden, dims.hidden, &mut rng),
            Dense::init(dims.hidden, dims.embed, &mut rng),
            Dense::init(dims.embed, dims.projection, &mut rng),
        ];
        Self { layers }
    }

    /// Rebuilds parameters from four chained layers (three trunk, one head).
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.len() != TRUNK_LAYERS + 1 {
            return Err(Error::ContractViolation(format!(
                "encoder needs {} layers, got {}",
                TRUNK_LAYERS + 1,
                layers.len()
            )));
        }
        check_chain(&layers)?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            input: self.layers[0].in_dim,
            hidden: self.layers[0].out_dim,
            embed: self.layers[2].out_dim,
            projection: self.layers[3].out_dim,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Penultimate (trunk) feature only.
    pub fn penultimate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(x, self.layers[0].in_dim)?;
        let trace = nn::forward(&self.layers[..TRUNK_LAYERS], RELU_LAYERS, x);
        Ok(trace.output().to_vec())
    }

    pub fn embed(&self, x: &[f64]) -> Result<Embedding> {
        check_input(x, self.layers[0].in_dim)?;
        let trace = nn::forward(&self.layers, RELU_LAYERS, x);
        let z = trace.output();
        let n = norm(z);
        if !(n > 1e-12) {
            return Err(Error::ContractViolation(
                "projection output has (near) zero norm".into(),
            ));
        }
        Ok(Embedding {
            penultimate: trace.acts[TRUNK_LAYERS].clone(),
            projected_unit: z.iter().map(|v| v / n).collect(),
        })
    }
}

fn check_chain(layers: &[Dense]) -> Result<()> {
    for (i, l) in layers.iter().enumerate() {
        if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
            return Err(Error::ContractViolation(format!("layer {i} has inconsistent shapes")));
        }
        if !l.is_finite() {
            return Err(Error::ContractViolation(format!("layer {i} has non-finite weights")));
        }
    }
    for w in layers.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::ContractViolation("layer dimensions do not chain".into()));
        }
    }
    Ok(())
}

/// Two correlated views of `x`: each coordinate is zeroed with probability
/// `mask_fraction`, otherwise jittered by `N(0, aug_noise^2)`.
pub fn augment<R: Rng + ?Sized>(x: &[f64], cfg: &TrainConfig, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let view = |rng: &mut R| -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let masked = rng.random::<f64>() < cfg.mask_fraction;
                let noise: f64 = StandardNormal.sample(rng);
                if masked {
                    0.0
                } else if cfg.aug_noise == 0.0 {
                    v
                } else {
                    v + cfg.aug_noise * noise
                }
            })
            .collect()
    };
    let a = view(rng);
    let b = view(rng);
    (a, b)
}

/// NT-Xent value and gradients for one batch of input pairs; gradients of
/// the batch-mean loss are accumulated into `grads`.
fn contrastive_step(layers: &[Dense], views: &[Vec<f64>], temperature: f64, grads: &mut [Dense]) -> Result<f64> {
    let traces: Vec<nn::Trace> = views.iter().map(|v| nn::forward(layers, RELU_LAYERS, v)).collect();
    let mut norms = Vec::with_capacity(traces.len());
    let mut units = Vec::with_capacity(traces.len());
    for t in &traces {
        let z = t.output();
        let n = norm(z).max(1e-12);
        norms.push(n);
        units.push(z.iter().map(|v| v / n).collect::<Vec<f64>>());
    }
    let (loss, grad_u) = ntxent_loss(&units, temperature)?;
    let scale = 1.0 / units.len() as f64;
    for (((trace, u), gu), n) in traces.iter().zip(&units).zip(&grad_u).zip(&norms) {
        // d(z/|z|)/dz applied to the upstream gradient.
        let dot: f64 = u.iter().zip(gu).map(|(a, b)| a * b).sum();
        let gz: Vec<f64> = u.iter().zip(gu).map(|(ui, gi)| scale * (gi - ui * dot) / n).collect();
        nn::backward(layers, RELU_LAYERS, trace, &gz, grads);
    }
    Ok(loss * scale)
}

fn batch_views<R: Rng + ?Sized>(batch: &[&[f64]], cfg: &TrainConfig, rng: &mut R) -> Vec<Vec<f64>> {
    let mut views = Vec::with_capacity(2 * batch.len());
    for x in batch {
        let (a, b) = augment(x, cfg, rng);
        views.push(a);
        views.push(b);
    }
    views
}

/// Runs `cfg.epochs` of Adam on the NT-Xent loss.
///
/// One epoch walks the delayed samples in shuffled minibatches of
/// `batch_delayed`; when `include_purified` is set each minibatch is topped
/// up with `batch_purified` samples drawn without replacement from
/// `purified`. Only feature vectors are accepted, labels never reach here.
pub fn train_self_supervised(
    params: &EncoderParams,
    delayed: &[&[f64]],
    purified: &[&[f64]],
    cfg: &TrainConfig,
    include_purified: bool,
) -> Result<EncoderParams> {
    cfg.validate()?;
    let use_purified = include_purified && cfg.batch_purified > 0 && !purified.is_empty();
    if delayed.is_empty() && !use_purified {
        return Err(Error::Training("no samples to train on".into()));
    }
    let dim = params.layers[0].in_dim;
    for x in delayed.iter().chain(purified) {
        check_input(x, dim)?;
    }
    let mut out = params.clone();
    if cfg.epochs == 0 {
        return Ok(out);
    }
    let mut rng = SprRng::seed_from_u64(cfg.seed);
    let mut adam = nn::Adam::new(&out.layers, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
    let mut order: Vec<usize> = (0..delayed.len()).collect();
    let mut pool: Vec<usize> = (0..purified.len()).collect();
    let b_d = cfg.batch_delayed.max(1);
    // With an empty delayed side, batches come from the purified buffer alone.
    let batches_per_epoch = if delayed.is_empty() {
        purified.len().div_ceil(cfg.batch_purified.max(1))
    } else {
        delayed.len().div_ceil(b_d)
    };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for b in 0..batches_per_epoch {
            let mut batch: Vec<&[f64]> = Vec::new();
            if !delayed.is_empty() {
                let end = ((b + 1) * b_d).min(order.len());
                batch.extend(order[b * b_d..end].iter().map(|&i| delayed[i]));
            }
            if use_purified {
                let take = cfg.batch_purified.min(pool.len());
                let (picked, _) = pool.partial_shuffle(&mut rng, take);
                batch.extend(picked.iter().map(|&i| purified[i]));
            }
            if batch.len() < 2 {
                continue;
            }
            let views = batch_views(&batch, cfg, &mut rng);
            let mut grads = nn::zero_grads(&out.layers);
            contrastive_step(&out.layers, &views, cfg.temperature, &mut grads)?;
            adam.step(&mut out.layers, &grads);
        }
    }
    // Probe: the loss on a fixed batch must still be finite.
    let probe: Vec<&[f64]> = delayed.iter().chain(purified).take(16).copied().collect();
    if probe.len() >= 2 {
        let mut probe_rng = SprRng::seed_from_u64(cfg.seed ^ 0x5EED);
        let views = batch_views(&probe, cfg, &mut probe_rng);
        let mut scratch = nn::zero_grads(&out.layers);
        let loss = contrastive_step(&out.layers, &views, cfg.temperature, &mut scratch)?;
        if !loss.is_finite() || !out.is_finite() {
            return Err(Error::Training(format!("probe loss became {loss}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// Trunk with a linear softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    layers: Vec<Dense>,
}

impl Classifier {
    /// Copies the trunk of `base` and attaches a fresh head.
    pub fn from_encoder(base: &EncoderParams, num_classes: usize, seed: u64) -> Self {
        let mut rng = SprRng::seed_from_u64(seed);
        let mut layers: Vec<Dense> = base.layers[..TRUNK_LAYERS].to_vec();
        layers.push(Dense::init(base.dims().embed, num_classes, &mut rng));
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.len() != TRUNK_LAYERS + 1 {
            return Err(Error::ContractViolation(format!(
                "classifier needs {} layers, got {}",
                TRUNK_LAYERS + 1,
                layers.len()
            )));
        }
        check_chain(&layers)?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.layers[TRUNK_LAYERS].out_dim
    }

    pub fn classify(&self, x: &[f64]) -> Result<Prediction> {
        check_input(x, self.layers[0].in_dim)?;
        let trace = nn::forward(&self.layers, RELU_LAYERS, x);
        let probabilities = softmax(trace.output());
        let label = argmax(&probabilities);
        Ok(Prediction { label, probabilities })
    }

    /// Mean cross-entropy gradient step data for one minibatch.
    fn accumulate(&self, batch: &[(&[f64], usize)], grads: &mut [Dense]) -> f64 {
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(x, y) in batch {
            let trace = nn::forward(&self.layers, RELU_LAYERS, x);
            let mut p = softmax(trace.output());
            loss -= libm::log(p[y].max(1e-300));
            p[y] -= 1.0;
            p.iter_mut().for_each(|v| *v *= scale);
            nn::backward(&self.layers, RELU_LAYERS, &trace, &p, grads);
        }
        loss * scale
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - m)).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Online supervised learner: a classifier plus its optimizer state.
#[derive(Debug, Clone)]
pub struct SupervisedLearner {
    classifier: Classifier,
    adam: nn::Adam,
}

impl SupervisedLearner {
    pub fn new(classifier: Classifier, cfg: &FinetuneConfig) -> Self {
        let adam = nn::Adam::new(
            &classifier.layers,
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_epsilon,
        );
        Self { classifier, adam }
    }

    /// One Adam step on the batch-mean cross-entropy; returns the loss.
    pub fn step(&mut self, batch: &[(&[f64], usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Training("empty supervised batch".into()));
        }
        let classes = self.classifier.num_classes();
        let dim = self.classifier.layers[0].in_dim;
        for (x, y) in batch {
            check_input(x, dim)?;
            if *y >= classes {
                return Err(Error::ContractViolation(format!("label {y} outside 0..{classes}")));
            }
        }
        let mut grads = nn::zero_grads(&self.classifier.layers);
        let loss = self.classifier.accumulate(batch, &mut grads);
        self.adam.step(&mut self.classifier.layers, &grads);
        Ok(loss)
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn into_classifier(self) -> Classifier {
        self.classifier
    }
}

/// Copies the trunk of `base`, attaches a softmax head and minimizes
/// cross-entropy on `examples` (features, observed label). `base` is not
/// modified.
pub fn finetune_classifier(
    base: &EncoderParams,
    examples: &[(&[f64], usize)],
    num_classes: usize,
    cfg: &FinetuneConfig,
) -> Result<Classifier> {
    if examples.is_empty() {
        return Err(Error::Training("finetuning needs a non-empty buffer".into()));
    }
    if num_classes == 0 {
        return Err(Error::param("num_classes", "must be at least 1"));
    }
    let first = examples[0].1;
    if examples.iter().all(|(_, y)| *y == first) {
        log::warn!("finetuning on a single-class buffer (class {first})");
    }
    let mut rng = SprRng::seed_from_u64(cfg.seed);
    let classifier = Classifier::from_encoder(base, num_classes, rng.random());
    let mut learner = SupervisedLearner::new(classifier, cfg);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let bs = cfg.batch_size.max(1);
    let mut batch = Vec::with_capacity(bs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            learner.step(&batch)?;
        }
    }
    if !learner.classifier.layers.iter().all(Dense::is_finite) {
        return Err(Error::Training("finetuning produced non-finite weights".into()));
    }
    Ok(learner.into_classifier())
}
