//! Encoder plus both heads, with a flat parameter view for the optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::data::{PreparedScene, SceneDraw};
use crate::error::{Error, Result};
use crate::losses::{total_loss, Heads, LossConfig, SceneFeatures, SceneTerms};
use crate::nn::{Activation, Encoder, MlpStack, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Co3Model {
    pub encoder: Encoder,
    pub heads: Heads,
}

/// Batch sums of the loss terms and batch means of the cosines.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub co2: f64,
    pub csp: f64,
    pub pos_cos: f64,
    pub neg_cos: f64,
}

impl Co3Model {
    /// Glorot initialization from `cfg.seed`.
    pub fn new(cfg: &RunConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = Encoder::new(cfg.encoder.clone(), &mut rng);
        let d_enc = cfg.encoder.d_enc;
        let projection = MlpStack::glorot(&[d_enc, cfg.projection_hidden, cfg.d1], Activation::Identity, &mut rng);
        let shape = MlpStack::glorot(&[d_enc, cfg.shape_hidden, cfg.loss.csp.n_bin], Activation::Identity, &mut rng);
        Self { encoder, heads: Heads { projection, shape } }
    }

    /// Rebuilds a model from stacks in [`Co3Model::stacks`] order.
    pub fn from_stacks(cfg: &RunConfig, mut stacks: Vec<MlpStack>) -> Result<Self> {
        let want = if cfg.encoder.pool_radii.is_empty() { 3 } else { 4 };
        if stacks.len() != want {
            return Err(Error::Shape(format!("expected {want} stacks for this configuration, found {}", stacks.len())));
        }
        let shape = stacks.pop().unwrap();
        let projection = stacks.pop().unwrap();
        let mix = if want == 4 { stacks.pop() } else { None };
        let point = stacks.pop().unwrap();
        let encoder = Encoder::from_stacks(cfg.encoder.clone(), point, mix)?;
        for (name, head) in [("projection", &projection), ("shape", &shape)] {
            if head.input_dim() != cfg.encoder.d_enc {
                return Err(Error::Shape(format!("{name} head takes {} inputs, encoder emits {}", head.input_dim(), cfg.encoder.d_enc)));
            }
        }
        if shape.output_dim() != cfg.loss.csp.n_bin {
            return Err(Error::Shape(format!("shape head emits {}, config has {} bins", shape.output_dim(), cfg.loss.csp.n_bin)));
        }
        Ok(Self { encoder, heads: Heads { projection, shape } })
    }

    /// Encoder stacks, projection head, shape head.
    pub fn stacks(&self) -> Vec<&MlpStack> {
        let mut s = self.encoder.stacks();
        s.push(&self.heads.projection);
        s.push(&self.heads.shape);
        s
    }

    pub fn stacks_mut(&mut self) -> Vec<&mut MlpStack> {
        let mut s = self.encoder.stacks_mut();
        s.push(&mut self.heads.projection);
        s.push(&mut self.heads.shape);
        s
    }

    pub fn param_count(&self) -> usize {
        self.stacks().iter().map(|s| s.param_count()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.stacks().iter().flat_map(|s| s.params()).collect()
    }

    pub fn grads(&self) -> Vec<f64> {
        self.stacks().iter().flat_map(|s| s.grads()).collect()
    }

    pub fn set_params(&mut self, values: &[f64]) {
        let mut at = 0;
        for s in self.stacks_mut() {
            at += s.set_params(&values[at..]);
        }
    }

    /// Sets one parameter by its index in [`Self::params`] order.
    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for s in self.stacks_mut() {
            let n = s.param_count();
            if index < n {
                s.set_param(index, value);
                return;
            }
            index -= n;
        }
        panic!("parameter index out of range");
    }

    pub fn zero_grads(&mut self) {
        self.stacks_mut().into_iter().for_each(|s| s.zero_grads());
    }

    fn accumulate_grads(&mut self, other: &Co3Model) {
        for (dst, src) in self.stacks_mut().into_iter().zip(other.stacks()) {
            dst.accumulate_grads(src);
        }
    }

    /// Loss for one scene; parameter gradients are accumulated.
    pub fn scene_loss(&mut self, scene: &PreparedScene, draw: &SceneDraw, cfg: &LossConfig) -> Result<SceneTerms> {
        let (veh, veh_cache) = self.encoder.forward(&scene.veh.input)?;
        let (fusion, fus_cache) = self.encoder.forward(&scene.fusion.input)?;
        let item = SceneFeatures {
            veh: &veh,
            fusion: &fusion,
            pairs: &draw.pairs,
            csp_veh_rows: &draw.csp_veh_rows,
            csp_fusion_rows: &draw.csp_fusion_rows,
            q_veh: &scene.veh.targets,
            q_fusion: &scene.fusion.targets,
        };
        let out = total_loss(&[item], &mut self.heads, cfg)?;
        self.encoder.backward(&veh_cache, &scene.veh.input, &out.d_veh[0])?;
        self.encoder.backward(&fus_cache, &scene.fusion.input, &out.d_fusion[0])?;
        Ok(out.scenes[0])
    }

    /// Loss over a batch with gradients summed in batch order into `self`.
    /// Scenes are evaluated on independent copies, in parallel when enabled.
    pub fn batch_loss(&mut self, batch: &[(&PreparedScene, &SceneDraw)], cfg: &LossConfig) -> Result<BatchLoss> {
        let run = |(scene, draw): &(&PreparedScene, &SceneDraw)| -> Result<(Co3Model, SceneTerms)> {
            let mut local = self.clone();
            local.zero_grads();
            let terms = local.scene_loss(scene, draw, cfg)?;
            Ok((local, terms))
        };
        #[cfg(feature = "parallel")]
        let results: Vec<Result<(Co3Model, SceneTerms)>> = {
            use rayon::prelude::*;
            batch.par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<(Co3Model, SceneTerms)>> = batch.iter().map(run).collect();

        let mut out = BatchLoss::default();
        for r in results {
            let (local, terms) = r?;
            self.accumulate_grads(&local);
            out.co2 += terms.co2;
            out.csp += terms.csp;
            out.pos_cos += terms.pos_cos;
            out.neg_cos += terms.neg_cos;
        }
        let n = batch.len().max(1) as f64;
        out.pos_cos /= n;
        out.neg_cos /= n;
        out.value = out.co2 + cfg.csp.w_csp * out.csp;
        Ok(out)
    }

    /// Frozen encoder features for every voxel of one view.
    pub fn encode(&self, input: &crate::nn::EncoderInput) -> Result<Tensor> {
        self.encoder.infer(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::prepare_scene;
    use crate::synth::{generate_scene, SceneSpec};

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.scene.extent = 6.0;
        cfg.scene.n_objects = 2;
        cfg.n1 = 8;
        cfg.loss.csp.n2 = 8;
        cfg.d1 = 16;
        cfg.projection_hidden = 16;
        cfg.shape_hidden = 16;
        cfg.encoder.hidden = 8;
        cfg.encoder.d_enc = 8;
        cfg
    }

    #[test]
    fn stacks_round_trip() {
        let cfg = tiny_cfg();
        let m = Co3Model::new(&cfg);
        let stacks: Vec<MlpStack> = m.stacks().into_iter().cloned().collect();
        assert_eq!(Co3Model::from_stacks(&cfg, stacks.clone()).unwrap(), m);
        assert!(Co3Model::from_stacks(&cfg, stacks[1..].to_vec()).is_err());
        let mut p = m.params();
        p[0] += 1.0;
        let mut m2 = m.clone();
        m2.set_params(&p);
        assert_eq!(m2.params(), p);
    }

    #[test]
    fn batch_gradient_is_sum_of_scene_gradients() {
        let cfg = tiny_cfg();
        let scenes: Vec<_> = (0..2)
            .map(|s| prepare_scene(&generate_scene(&SceneSpec { seed: s, ..cfg.scene.clone() }).unwrap(), &cfg).unwrap())
            .collect();
        let draws: Vec<_> = scenes.iter().map(|s| SceneDraw::sample(s, cfg.n1, cfg.loss.csp.n2, 4).unwrap()).collect();
        let mut m = Co3Model::new(&cfg);
        let batch: Vec<_> = scenes.iter().zip(&draws).collect();
        let total = m.batch_loss(&batch, &cfg.loss).unwrap();

        let mut seq = Co3Model::new(&cfg);
        let mut sum = 0.0;
        for (s, d) in &batch {
            let t = seq.scene_loss(s, d, &cfg.loss).unwrap();
            sum += t.co2 + cfg.loss.csp.w_csp * t.csp;
        }
        assert!((total.value - sum).abs() < 1e-9);
        for (a, b) in m.grads().iter().zip(seq.grads()) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }
}
