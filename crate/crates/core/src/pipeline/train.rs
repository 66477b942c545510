//! SGD-with-momentum pretraining loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::data::{generate_scenes, prepare_scenes, PreparedScene, SceneDraw};
use super::derive_seed;
use super::model::{BatchLoss, Co3Model};
use crate::error::{Error, Result};

const BATCH_STREAM: u64 = 0xba7c4;
const DRAW_STREAM: u64 = 0xd4a3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: BatchLoss,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainMetrics {
    pub records: Vec<StepRecord>,
    /// Steps whose whole batch lacked correspondences; they have no record.
    pub skipped: usize,
}

impl TrainMetrics {
    /// One `step L L_co2 L_csp pos_cos neg_cos` line per executed step.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let l = &r.loss;
            writeln!(s, "{} {} {} {} {} {}", r.step, l.value, l.co2, l.csp, l.pos_cos, l.neg_cos).unwrap();
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss.value).collect()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

/// Trailing moving average; entry `i` averages `values[i + 1 - window ..= i]`
/// and exists for `i >= window - 1`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

/// Visits scenes in a fresh seeded shuffle per epoch, so every scene is seen
/// once per `scenes.len()` draws.
struct EpochOrder {
    seed: u64,
    epoch: usize,
    order: Vec<usize>,
}

impl EpochOrder {
    fn new(n: usize, seed: u64) -> Self {
        let mut this = Self { seed, epoch: 0, order: (0..n).collect() };
        this.shuffle();
        this
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, BATCH_STREAM, self.epoch as u64));
        self.order.shuffle(&mut rng);
    }

    /// Scene of the `draw`-th draw of the run; draws must not go backwards
    /// across an epoch boundary.
    fn scene(&mut self, draw: usize) -> usize {
        let n = self.order.len();
        if draw / n != self.epoch {
            self.epoch = draw / n;
            self.shuffle();
        }
        self.order[draw % n]
    }
}

/// Pretrains on scenes generated from `cfg`.
pub fn pretrain(cfg: &RunConfig) -> Result<(Co3Model, TrainMetrics)> {
    cfg.validate()?;
    let pairs = generate_scenes(&cfg.scene, cfg.seed, cfg.scenes)?;
    let scenes = prepare_scenes(&pairs, cfg)?;
    pretrain_prepared(&scenes, cfg, |_| {})
}

/// Pretrains a fresh model on already prepared scenes. `on_step` sees every
/// record as it is produced.
pub fn pretrain_prepared(
    scenes: &[PreparedScene],
    cfg: &RunConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(Co3Model, TrainMetrics)> {
    cfg.validate()?;
    if scenes.len() < cfg.batch_scenes {
        return Err(Error::Config(format!("{} scenes cannot fill a batch of {}", scenes.len(), cfg.batch_scenes)));
    }
    let mut model = Co3Model::new(cfg);
    let mut velocity = vec![0.0; model.param_count()];
    let mut metrics = TrainMetrics::default();
    let mut epochs = EpochOrder::new(scenes.len(), cfg.seed);

    for step in 0..cfg.steps {
        let mut picks: Vec<usize> = (0..cfg.batch_scenes).map(|j| epochs.scene(step * cfg.batch_scenes + j)).collect();
        picks.sort_unstable();
        let draw_seed = derive_seed(cfg.seed, DRAW_STREAM, step as u64);
        let mut draws = Vec::with_capacity(picks.len());
        for i in &picks {
            match SceneDraw::sample(&scenes[*i], cfg.n1, cfg.loss.csp.n2, derive_seed(draw_seed, 0, *i as u64)) {
                Ok(d) => draws.push((&scenes[*i], d)),
                Err(Error::EmptyCorrespondence | Error::TooFewPairs(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if draws.is_empty() {
            metrics.skipped += 1;
            if 2 * metrics.skipped > cfg.steps {
                return Err(Error::TooManySkipped { skipped: metrics.skipped, steps: cfg.steps });
            }
            continue;
        }

        model.zero_grads();
        let batch: Vec<_> = draws.iter().map(|(s, d)| (*s, d)).collect();
        let loss = model.batch_loss(&batch, &cfg.loss).map_err(|e| match e {
            Error::ZeroNorm(_) => Error::Divergence(format!("projection collapsed to zero at step {step}")),
            e => e,
        })?;
        let grads = model.grads();
        if !loss.value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite loss or gradient at step {step}")));
        }
        let mut params = model.params();
        for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grads) {
            *v = cfg.momentum * *v + g;
            *p -= cfg.learning_rate * *v;
        }
        model.set_params(&params);

        let record = StepRecord { step, loss };
        on_step(&record);
        metrics.records.push(record);
    }
    Ok((model, metrics))
}
