//! Linear probe on frozen encoder features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::data::voxel_labels;
use super::model::Co3Model;
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Activation, EncoderInput, MlpStack, Tensor};
use crate::synth::{PointClass, ScenePair};
use crate::voxel::voxelize;

pub const N_CLASSES: usize = PointClass::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    /// Drives the scene split and the probe initialization.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { iterations: 300, learning_rate: 0.5, momentum: 0.9, l2: 1e-4, seed: 0 }
    }
}

/// Feature rows with one class label each.
#[derive(Debug, Clone)]
pub struct LabeledFeatures {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn concat(parts: &[LabeledFeatures]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.features.cols());
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.features.cols() != cols {
                return Err(Error::Shape("feature widths differ between parts".into()));
            }
            data.extend_from_slice(p.features.data());
            labels.extend_from_slice(&p.labels);
        }
        Ok(Self { features: Tensor::from_vec(labels.len(), cols, data)?, labels })
    }
}

/// Softmax regression with per-column standardization from the training set.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    layer: MlpStack,
}

fn standardized(x: &Tensor, mean: &[f64], scale: &[f64]) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) * s;
        }
    }
    out
}

impl LinearProbe {
    pub fn fit(train: &LabeledFeatures, cfg: &ProbeConfig) -> Result<Self> {
        let (n, d) = train.features.shape();
        let mut seen = [false; N_CLASSES];
        for l in &train.labels {
            *seen.get_mut(*l).ok_or_else(|| Error::Format(format!("label {l} out of range")))? = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::MissingClass(c));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            mean.iter_mut().zip(train.features.row(r)).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(train.features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / v.sqrt().max(1e-8)).collect();
        let x = standardized(&train.features, &mean, &scale);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layer = MlpStack::glorot(&[d, N_CLASSES], Activation::Identity, &mut rng);
        let mut velocity = vec![0.0; layer.param_count()];
        for _ in 0..cfg.iterations {
            layer.zero_grads();
            let (logits, cache) = layer.forward(&x)?;
            let mut d_logits = softmax_rows(&logits);
            for (r, l) in train.labels.iter().enumerate() {
                d_logits.row_mut(r)[*l] -= 1.0;
            }
            d_logits.scale(1.0 / n as f64);
            layer.backward(&cache, &d_logits)?;
            let grads = layer.grads();
            let mut params = layer.params();
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
                *v = cfg.momentum * *v + g + cfg.l2 * *p;
                *p -= cfg.learning_rate * *v;
            }
            layer.set_params(&params);
        }
        Ok(Self { mean, scale, layer })
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let logits = self.layer.infer(&standardized(features, &self.mean, &self.scale))?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, data: &LabeledFeatures) -> Result<f64> {
        let pred = self.predict(&data.features)?;
        let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / data.labels.len().max(1) as f64)
    }
}

/// Fits on `train`, reports accuracy on `test`.
pub fn probe_accuracy(train: &LabeledFeatures, test: &LabeledFeatures, cfg: &ProbeConfig) -> Result<f64> {
    LinearProbe::fit(train, cfg)?.accuracy(test)
}

/// Encoder features and majority labels for every voxel of the vehicle view.
pub fn scene_features(model: &Co3Model, pair: &ScenePair, run: &RunConfig) -> Result<LabeledFeatures> {
    let grid = voxelize(&pair.veh, &run.voxel);
    let labels = voxel_labels(&pair.veh, &grid, &pair.labels)?;
    let features = model.encode(&EncoderInput::from_grid(&grid, &run.encoder.pool_radii))?;
    Ok(LabeledFeatures { features, labels })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub train_voxels: usize,
    pub test_voxels: usize,
}

/// Splits `scenes` in half by a seeded shuffle, fits on one half and scores
/// the other.
pub fn eval_probe(model: &Co3Model, scenes: &[ScenePair], run: &RunConfig, cfg: &ProbeConfig) -> Result<ProbeReport> {
    if scenes.len() < 2 {
        return Err(Error::Config("the probe needs at least two scenes".into()));
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let cut = scenes.len().div_ceil(2);
    let gather = |idx: &[usize]| -> Result<LabeledFeatures> {
        let parts = idx.iter().map(|i| scene_features(model, &scenes[*i], run)).collect::<Result<Vec<_>>>()?;
        LabeledFeatures::concat(&parts)
    };
    let train = gather(&order[..cut])?;
    let test = gather(&order[cut..])?;
    let accuracy = probe_accuracy(&train, &test, cfg)?;
    Ok(ProbeReport { accuracy, train_voxels: train.labels.len(), test_voxels: test.labels.len() })
}
