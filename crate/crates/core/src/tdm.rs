//! Integrate-and-fire truncation detection.
//!
//! A linear layer with a sigmoid maps each encoder frame to a firing signal
//! in (0, 1). The neuron integrates the signal and fires (subtracting the
//! threshold) whenever the accumulator reaches it. A chunk is truncated when
//! the neuron does not fire on its last retained frame. The final content
//! frame is always dropped first: it is the speech-to-padding edge, where
//! the neuron fires regardless of content.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TraceError};
use crate::model::EncoderFeatureSeq;

pub const DEFAULT_FIRE_THRESHOLD: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmWeights {
    pub w: Vec<f64>,
    pub b: f64,
}

impl TdmWeights {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() {
            return Err(Error::Validation("TDM weights are empty".into()));
        }
        if !self.b.is_finite() || self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite TDM weight".into()));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(frame: &[f32], weights: &TdmWeights) -> f64 {
    weights
        .w
        .iter()
        .zip(frame)
        .map(|(w, &x)| w * x as f64)
        .sum::<f64>()
        + weights.b
}

fn check_signal_input(features: &EncoderFeatureSeq, weights: &TdmWeights) -> Result<()> {
    if weights.dim() != features.dim {
        return Err(Error::Validation(format!(
            "TDM weights have dim {}, features have {}",
            weights.dim(),
            features.dim
        )));
    }
    if features.content_len < 2 {
        return Err(Error::DegenerateInput(format!(
            "content_len {} leaves no frames after dropping the last",
            features.content_len
        )));
    }
    Ok(())
}

/// Firing signal over content frames `0..content_len - 1`.
pub fn signal(features: &EncoderFeatureSeq, weights: &TdmWeights) -> Result<Vec<f64>> {
    check_signal_input(features, weights)?;
    Ok((0..features.content_len - 1)
        .map(|n| sigmoid(logit(features.frame(n), weights)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfScanResult {
    pub fire_positions: Vec<usize>,
    pub last_fire: Option<usize>,
    pub residual: f64,
}

pub fn if_scan(alpha: &[f64], threshold: f64) -> IfScanResult {
    let mut acc = 0.0;
    let mut fires = Vec::new();
    for (n, &a) in alpha.iter().enumerate() {
        acc += a;
        if acc >= threshold {
            acc -= threshold;
            fires.push(n);
        }
    }
    IfScanResult {
        last_fire: fires.last().copied(),
        fire_positions: fires,
        residual: acc,
    }
}

/// True when the neuron does not fire on the last element of `alpha`.
pub fn detect_truncation(alpha: &[f64], threshold: f64) -> bool {
    let scan = if_scan(alpha, threshold);
    match scan.last_fire {
        None => true,
        Some(p) => p + 1 < alpha.len(),
    }
}

/// `|Σ alpha − word_count|`.
pub fn quantity_loss(alpha: &[f64], word_count: u32) -> f64 {
    (alpha.iter().sum::<f64>() - word_count as f64).abs()
}

/// RMSE of per-utterance count errors `(Σ alpha − word_count)`.
pub fn batch_rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdmGradient {
    pub w: Vec<f64>,
    pub b: f64,
}

/// Σ alpha and its gradient with respect to (w, b).
fn count_and_grad(features: &EncoderFeatureSeq, weights: &TdmWeights) -> (f64, TdmGradient) {
    let mut gw = vec![0.0; weights.dim()];
    let mut gb = 0.0;
    let mut total = 0.0;
    for n in 0..features.content_len - 1 {
        let frame = features.frame(n);
        let a = sigmoid(logit(frame, weights));
        total += a;
        let d = a * (1.0 - a);
        gb += d;
        for (g, &x) in gw.iter_mut().zip(frame) {
            *g += d * x as f64;
        }
    }
    (total, TdmGradient { w: gw, b: gb })
}

/// Analytic gradient of [`quantity_loss`] through the signal layer. The
/// subgradient at zero error is taken as zero.
pub fn loss_grad(
    features: &EncoderFeatureSeq,
    weights: &TdmWeights,
    word_count: u32,
) -> Result<TdmGradient> {
    check_signal_input(features, weights)?;
    let (total, mut g) = count_and_grad(features, weights);
    let e = total - word_count as f64;
    let s = if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    };
    g.w.iter_mut().for_each(|v| *v *= s);
    g.b *= s;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmTrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub peak_learning_rate: f64,
    pub batch_frames: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub rng_seed: u64,
}

impl Default for TdmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            warmup_epochs: 3,
            peak_learning_rate: 1e-6,
            batch_frames: 4500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            rng_seed: 0,
        }
    }
}

impl TdmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.peak_learning_rate) || !positive(self.adam_eps) {
            return Err(Error::Config("learning rate and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_frames == 0 {
            return Err(Error::Config("batch_frames must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdmTrainResult {
    pub weights: TdmWeights,
    /// Whole-dataset RMSE after each epoch.
    pub epoch_rmse: Vec<f64>,
}

/// Utterance-level training example: encoded frames and their word count.
#[derive(Debug, Clone, PartialEq)]
pub struct TdmExample {
    pub features: EncoderFeatureSeq,
    pub word_count: u32,
}

/// Whole-dataset count RMSE under `weights`.
pub fn dataset_rmse(dataset: &[TdmExample], weights: &TdmWeights) -> Result<f64> {
    let errors = dataset
        .iter()
        .map(|ex| signal(&ex.features, weights).map(|a| a.iter().sum::<f64>() - ex.word_count as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(batch_rmse(&errors))
}

/// Groups shuffled utterances into batches of at most `batch_frames` retained
/// frames; an utterance longer than the budget forms its own batch.
fn make_batches(order: &[usize], dataset: &[TdmExample], batch_frames: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut frames = 0;
    for &i in order {
        let n = dataset[i].features.content_len - 1;
        if !current.is_empty() && frames + n > batch_frames {
            batches.push(std::mem::take(&mut current));
            frames = 0;
        }
        current.push(i);
        frames += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Adam on batch RMSE with a linear warmup from 0 to the peak rate over the
/// first `warmup_epochs`, constant afterwards.
pub fn train_tdm(
    dataset: &[TdmExample],
    config: &TdmTrainConfig,
    init: TdmWeights,
) -> Result<TdmTrainResult> {
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("empty TDM training set".into()));
    }
    config.validate()?;
    init.validate()?;
    for ex in dataset {
        check_signal_input(&ex.features, &init)?;
    }
    let dim = init.dim();
    let mut weights = init;
    let mut m = vec![0.0; dim + 1];
    let mut v = vec![0.0; dim + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batches_per_epoch = make_batches(&order, dataset, config.batch_frames).len();
    let warmup_steps = config.warmup_epochs * batches_per_epoch;
    let mut step = 0usize;
    let mut epoch_rmse = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in make_batches(&order, dataset, config.batch_frames) {
            let mut errors = Vec::with_capacity(batch.len());
            let mut grads = Vec::with_capacity(batch.len());
            for &i in &batch {
                let (total, g) = count_and_grad(&dataset[i].features, &weights);
                errors.push(total - dataset[i].word_count as f64);
                grads.push(g);
            }
            let rmse = batch_rmse(&errors);
            let mut g = vec![0.0; dim + 1];
            if rmse > 0.0 {
                let scale = 1.0 / (batch.len() as f64 * rmse);
                for (e, gi) in errors.iter().zip(&grads) {
                    for (acc, gw) in g.iter_mut().zip(&gi.w) {
                        *acc += scale * e * gw;
                    }
                    g[dim] += scale * e * gi.b;
                }
            }
            let lr = if step < warmup_steps {
                config.peak_learning_rate * (step + 1) as f64 / warmup_steps as f64
            } else {
                config.peak_learning_rate
            };
            step += 1;
            let t = step as i32;
            let bc1 = 1.0 - config.adam_beta1.powi(t);
            let bc2 = 1.0 - config.adam_beta2.powi(t);
            for k in 0..=dim {
                m[k] = config.adam_beta1 * m[k] + (1.0 - config.adam_beta1) * g[k];
                v[k] = config.adam_beta2 * v[k] + (1.0 - config.adam_beta2) * g[k] * g[k];
                let update = lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + config.adam_eps);
                if k < dim {
                    weights.w[k] -= update;
                } else {
                    weights.b -= update;
                }
            }
        }
        epoch_rmse.push(dataset_rmse(dataset, &weights)?);
    }
    Ok(TdmTrainResult {
        weights,
        epoch_rmse,
    })
}

const WEIGHTS_MAGIC: [u8; 4] = *b"TDMW";
const WEIGHTS_VERSION: u16 = 1;

/// `magic "TDMW" | u16 version | u16 reserved | u32 dim | f64 w[dim] | f64 b`.
pub fn weights_to_bytes(weights: &TdmWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * (weights.dim() + 1));
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(weights.dim() as u32).to_le_bytes());
    for v in weights.w.iter().chain(std::iter::once(&weights.b)) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<TdmWeights> {
    if bytes.len() < 12 {
        return Err(TraceError::Truncated {
            context: "TDM weights header",
        }
        .into());
    }
    if bytes[..4] != WEIGHTS_MAGIC {
        return Err(TraceError::BadMagic.into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != WEIGHTS_VERSION {
        return Err(TraceError::UnsupportedVersion {
            found: version,
            expected: WEIGHTS_VERSION,
        }
        .into());
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < 8 * (dim + 1) {
        return Err(TraceError::Truncated {
            context: "TDM weights body",
        }
        .into());
    }
    if body.len() > 8 * (dim + 1) {
        return Err(TraceError::TrailingData.into());
    }
    let mut vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let b = vals.pop().expect("bias present");
    let weights = TdmWeights { w: vals, b };
    weights.validate()?;
    Ok(weights)
}

pub fn save_weights(weights: &TdmWeights, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, weights_to_bytes(weights))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<TdmWeights> {
    weights_from_bytes(&fs::read(path)?)
}
