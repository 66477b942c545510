//! Finite-difference check of the full pretraining objective.

use super::config::RunConfig;
use super::data::{prepare_scene, PreparedScene, SceneDraw};
use super::model::Co3Model;
use crate::error::Result;
use crate::losses::{total_loss_value, Heads, LossConfig, SceneFeatures};
use crate::nn::{grad_check_coords, Tensor};
use crate::synth::{generate_scene, SceneSpec};

pub const GRAD_CHECK_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub params: usize,
    pub checked: usize,
    pub loss: f64,
    /// Largest `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_err: f64,
    /// The same measure after corrupting one analytic entry.
    pub mutated_err: f64,
}

/// Defaults with small samples and a small scene so that every parameter can
/// be perturbed.
pub fn grad_check_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.n1 = 8;
    cfg.loss.csp.n2 = 8;
    cfg.d1 = 16;
    cfg.seed = seed;
    cfg.scene.extent = 5.0;
    cfg.scene.n_objects = 2;
    cfg.scene.ground_density = 0.5;
    cfg.scene.surface_density = 6.0;
    cfg
}

fn features<'a>(veh: &'a Tensor, fusion: &'a Tensor, scene: &'a PreparedScene, draw: &'a SceneDraw) -> SceneFeatures<'a> {
    SceneFeatures {
        veh,
        fusion,
        pairs: &draw.pairs,
        csp_veh_rows: &draw.csp_veh_rows,
        csp_fusion_rows: &draw.csp_fusion_rows,
        q_veh: &scene.veh.targets,
        q_fusion: &scene.fusion.targets,
    }
}

fn full_value(model: &Co3Model, scene: &PreparedScene, draw: &SceneDraw, cfg: &LossConfig) -> f64 {
    let (Ok(veh), Ok(fusion)) = (model.encode(&scene.veh.input), model.encode(&scene.fusion.input)) else {
        return f64::NAN;
    };
    total_loss_value(&[features(&veh, &fusion, scene, draw)], &model.heads, cfg).unwrap_or(f64::NAN)
}

/// Compares analytic gradients of the total loss for one scene against
/// central differences on every `stride`-th parameter (every parameter when
/// `stride` is 1).
pub fn run_grad_check(cfg: &RunConfig, stride: usize) -> Result<GradCheckReport> {
    let pair = generate_scene(&SceneSpec { seed: cfg.seed, ..cfg.scene.clone() })?;
    let scene = prepare_scene(&pair, cfg)?;
    let draw = SceneDraw::sample(&scene, cfg.n1, cfg.loss.csp.n2, cfg.seed)?;
    let mut model = Co3Model::new(cfg);
    model.zero_grads();
    let terms = model.scene_loss(&scene, &draw, &cfg.loss)?;
    let loss = terms.co2 + cfg.loss.csp.w_csp * terms.csp;
    let params = model.params();
    let analytic = model.grads();
    let n_enc: usize = model.encoder.stacks().iter().map(|s| s.param_count()).sum();
    let stride = stride.max(1);
    let enc_coords: Vec<usize> = (0..n_enc).step_by(stride).collect();
    let head_coords: Vec<usize> = (n_enc..params.len()).step_by(stride).collect();

    let mut probe = model.clone();
    let mut full = |i: usize, v: f64| {
        probe.set_param(i, v);
        let out = full_value(&probe, &scene, &draw, &cfg.loss);
        probe.set_param(i, params[i]);
        out
    };
    let enc_err = grad_check_coords(&mut full, &params, &analytic, GRAD_CHECK_STEP, &enc_coords);

    let target = (0..params.len()).max_by(|a, b| analytic[*a].abs().total_cmp(&analytic[*b].abs())).unwrap_or(0);
    let mut corrupted = analytic.clone();
    corrupted[target] = 2.0 * corrupted[target] + 0.1;
    let mutated_err = grad_check_coords(&mut full, &params, &corrupted, GRAD_CHECK_STEP, &[target]);

    // Head coordinates leave the encoder output unchanged.
    let veh = model.encode(&scene.veh.input)?;
    let fusion = model.encode(&scene.fusion.input)?;
    let item = features(&veh, &fusion, &scene, &draw);
    let mut heads = model.heads.clone();
    let head_err = grad_check_coords(
        |i, v| {
            let local = i - n_enc;
            let n_proj = heads.projection.param_count();
            let set = |h: &mut Heads, v: f64| {
                if local < n_proj {
                    h.projection.set_param(local, v)
                } else {
                    h.shape.set_param(local - n_proj, v)
                }
            };
            set(&mut heads, v);
            let out = total_loss_value(&[item], &heads, &cfg.loss).unwrap_or(f64::NAN);
            set(&mut heads, params[i]);
            out
        },
        &params,
        &analytic,
        GRAD_CHECK_STEP,
        &head_coords,
    );

    Ok(GradCheckReport {
        params: params.len(),
        checked: enc_coords.len() + head_coords.len(),
        loss,
        max_rel_err: enc_err.max(head_err),
        mutated_err,
    })
}
