//! Voxel encoder.
//!
//! Each voxel is described by its centroid offset inside the cell (scaled to
//! `[-0.5, 0.5)`), `ln(count)` and its mean point features. A per-voxel MLP
//! lifts these to `hidden` channels; when pooling radii are configured, the
//! lifted features are pooled over cubic voxel neighborhoods of each radius,
//! concatenated with the voxel's own features, and mixed by a second per-voxel
//! MLP. Pooling keeps the neighborhood mean and the three first moments
//! `mean(d_k * h)` along the scaled cell offsets `d`, so the mix layer sees
//! where features sit around a voxel and not only what they are. Everything is
//! indexed by voxel, so permuting voxel rows permutes output rows.

use rand::Rng;

use super::mlp::{Activation, ForwardCache, MlpStack};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::voxel::{Neighborhood, VoxelGrid};

/// Inputs per voxel before the point features: offset (3) and log count (1).
pub const ENCODER_BASE_INPUTS: usize = 4;
/// Pooled blocks per neighborhood: mean and the x, y, z moments.
pub const POOL_BLOCKS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub feature_width: usize,
    pub hidden: usize,
    pub d_enc: usize,
    pub pool_radii: Vec<i32>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { feature_width: 1, hidden: 32, d_enc: 64, pool_radii: vec![1, 3] }
    }
}

impl EncoderConfig {
    pub fn input_dim(&self) -> usize {
        ENCODER_BASE_INPUTS + self.feature_width
    }
}

/// Encoder input for one voxel grid.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    pub x: Tensor,
    pub pools: Vec<Neighborhood>,
}

impl EncoderInput {
    pub fn from_grid(grid: &VoxelGrid, pool_radii: &[i32]) -> Self {
        let d = grid.feature_width();
        let params = grid.params();
        let mut x = Tensor::zeros(grid.len(), ENCODER_BASE_INPUTS + d);
        for r in 0..grid.len() {
            let lo = params.cell_min(&grid.indices()[r]);
            let c = grid.centroids()[r];
            let row = x.row_mut(r);
            for k in 0..3 {
                row[k] = (c[k] - lo[k]) / params.voxel_size[k] - 0.5;
            }
            row[3] = (grid.counts()[r] as f64).ln();
            row[4..].copy_from_slice(grid.feature(r));
        }
        let pools = pool_radii.iter().map(|rad| Neighborhood::build(grid, *rad)).collect();
        Self { x, pools }
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    point: ForwardCache,
    mix: Option<ForwardCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    point: MlpStack,
    mix: Option<MlpStack>,
}

/// `[mean h | mean d_x h | mean d_y h | mean d_z h]` per row.
fn pool_moments(h: &Tensor, nb: &Neighborhood) -> Tensor {
    let c = h.cols();
    let mut out = Tensor::zeros(h.rows(), POOL_BLOCKS * c);
    for r in 0..h.rows() {
        let members = nb.of(r);
        let inv = 1.0 / members.len() as f64;
        let dst = out.row_mut(r);
        for (m, d) in members.iter().zip(nb.directions_of(r)) {
            let src = h.row(*m as usize);
            let w = [inv, inv * d[0], inv * d[1], inv * d[2]];
            for (block, wk) in w.iter().enumerate() {
                if *wk == 0.0 {
                    continue;
                }
                for (o, v) in dst[block * c..(block + 1) * c].iter_mut().zip(src) {
                    *o += wk * v;
                }
            }
        }
    }
    out
}

fn pool_moments_backward(dp: &Tensor, nb: &Neighborhood, dh: &mut Tensor) {
    let c = dh.cols();
    for r in 0..dp.rows() {
        let members = nb.of(r);
        let inv = 1.0 / members.len() as f64;
        let g = dp.row(r);
        for (m, d) in members.iter().zip(nb.directions_of(r)) {
            let w = [inv, inv * d[0], inv * d[1], inv * d[2]];
            let dst = dh.row_mut(*m as usize);
            for (block, wk) in w.iter().enumerate() {
                if *wk == 0.0 {
                    continue;
                }
                for (o, v) in dst.iter_mut().zip(&g[block * c..(block + 1) * c]) {
                    *o += wk * v;
                }
            }
        }
    }
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Self {
        let inputs = config.input_dim();
        let (point, mix) = if config.pool_radii.is_empty() {
            (MlpStack::glorot(&[inputs, config.hidden, config.d_enc], Activation::Identity, rng), None)
        } else {
            let point = MlpStack::glorot(&[inputs, config.hidden, config.hidden], Activation::Relu, rng);
            let width = config.hidden * (1 + POOL_BLOCKS * config.pool_radii.len());
            let mix = MlpStack::glorot(&[width, config.d_enc, config.d_enc], Activation::Identity, rng);
            (point, Some(mix))
        };
        Self { config, point, mix }
    }

    /// Rebuilds an encoder from stored stacks, checking them against `config`.
    pub fn from_stacks(config: EncoderConfig, point: MlpStack, mix: Option<MlpStack>) -> Result<Self> {
        if point.input_dim() != config.input_dim() {
            return Err(Error::Shape(format!(
                "encoder expects {} inputs, stored stack takes {}",
                config.input_dim(),
                point.input_dim()
            )));
        }
        match (&mix, config.pool_radii.is_empty()) {
            (None, true) => {}
            (Some(m), false) if m.input_dim() == point.output_dim() * (1 + POOL_BLOCKS * config.pool_radii.len()) => {}
            _ => return Err(Error::Shape("stored encoder does not match the configured pooling".into())),
        }
        let out = mix.as_ref().unwrap_or(&point).output_dim();
        if out != config.d_enc {
            return Err(Error::Shape(format!("stored encoder emits {out} channels, config says {}", config.d_enc)));
        }
        Ok(Self { config, point, mix })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn stacks(&self) -> Vec<&MlpStack> {
        std::iter::once(&self.point).chain(self.mix.as_ref()).collect()
    }

    pub fn stacks_mut(&mut self) -> Vec<&mut MlpStack> {
        std::iter::once(&mut self.point).chain(self.mix.as_mut()).collect()
    }

    pub fn forward(&self, input: &EncoderInput) -> Result<(Tensor, EncoderCache)> {
        if input.pools.len() != self.config.pool_radii.len() {
            return Err(Error::Shape(format!(
                "input carries {} neighborhoods, encoder pools over {}",
                input.pools.len(),
                self.config.pool_radii.len()
            )));
        }
        let (h, point) = self.point.forward(&input.x)?;
        let Some(mix) = &self.mix else {
            return Ok((h, EncoderCache { point, mix: None }));
        };
        let pooled: Vec<Tensor> = input.pools.iter().map(|nb| pool_moments(&h, nb)).collect();
        let mut parts = vec![&h];
        parts.extend(pooled.iter());
        let (out, mix_cache) = mix.forward(&Tensor::hcat(&parts)?)?;
        Ok((out, EncoderCache { point, mix: Some(mix_cache) }))
    }

    pub fn infer(&self, input: &EncoderInput) -> Result<Tensor> {
        self.forward(input).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients for `dL/d(output)`.
    pub fn backward(&mut self, cache: &EncoderCache, input: &EncoderInput, d_out: &Tensor) -> Result<()> {
        let dh = match (&mut self.mix, &cache.mix) {
            (Some(mix), Some(mix_cache)) => {
                let dcat = mix.backward(mix_cache, d_out)?;
                let hidden = self.point.output_dim();
                let mut dh = dcat.columns(0, hidden);
                let width = POOL_BLOCKS * hidden;
                for (k, nb) in input.pools.iter().enumerate() {
                    pool_moments_backward(&dcat.columns(hidden + k * width, width), nb, &mut dh);
                }
                dh
            }
            (None, None) => d_out.clone(),
            _ => return Err(Error::StaleCache),
        };
        self.point.backward(&cache.point, &dh)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::PointCloud;
    use crate::nn::grad_check;
    use crate::voxel::{voxelize, VoxelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(seed: u64, n: usize) -> VoxelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)])
            .collect();
        let cloud = PointCloud::new(pts, (0..n).map(|_| rng.random()).collect(), 1).unwrap();
        voxelize(&cloud, &VoxelParams::default())
    }

    #[test]
    fn input_features() {
        let params = VoxelParams { voxel_size: [1.0; 3], range_min: [0.0; 3], range_max: [4.0; 3] };
        let cloud = PointCloud::new(vec![[0.25, 0.5, 0.75], [0.25, 0.5, 0.75]], vec![0.3, 0.5], 1).unwrap();
        let inp = EncoderInput::from_grid(&voxelize(&cloud, &params), &[]);
        let row = inp.x.row(0);
        assert!((row[0] + 0.25).abs() < 1e-15 && row[1].abs() < 1e-15 && (row[2] - 0.25).abs() < 1e-15);
        assert!((row[3] - 2f64.ln()).abs() < 1e-15);
        assert!((row[4] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn output_width_and_row_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::new(EncoderConfig::default(), &mut rng);
        let g = grid(2, 400);
        let input = EncoderInput::from_grid(&g, &enc.config().pool_radii);
        let out = enc.infer(&input).unwrap();
        assert_eq!(out.shape(), (g.len(), 64));

        // Reversing the row order of the input (and relabeling neighborhoods)
        // reverses the output rows.
        let m = g.len();
        let perm: Vec<usize> = (0..m).rev().collect();
        let mut permuted = input.clone();
        permuted.x = input.x.gather_rows(&perm);
        permuted.pools = input
            .pools
            .iter()
            .map(|nb| crate::voxel::Neighborhood::from_lists(
                perm.iter()
                    .map(|r| nb.of(*r).iter().zip(nb.directions_of(*r)).map(|(j, d)| ((m - 1 - *j as usize) as u32, *d)).collect())
                    .collect(),
            ))
            .collect();
        let out_p = enc.infer(&permuted).unwrap();
        for (i, r) in perm.iter().enumerate() {
            for (a, b) in out_p.row(i).iter().zip(out.row(*r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = EncoderConfig { hidden: 6, d_enc: 5, ..EncoderConfig::default() };
        let mut enc = Encoder::new(cfg, &mut rng);
        let g = grid(4, 120);
        let input = EncoderInput::from_grid(&g, &enc.config().pool_radii);
        let w = Tensor::from_vec(g.len(), 5, (0..g.len() * 5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

        let (_, cache) = enc.forward(&input).unwrap();
        enc.backward(&cache, &input, &w).unwrap();
        let params: Vec<f64> = enc.stacks().iter().flat_map(|s| s.params()).collect();
        let grads: Vec<f64> = enc.stacks().iter().flat_map(|s| s.grads()).collect();

        let mut probe = enc.clone();
        let loss = |p: &[f64]| {
            let mut at = 0;
            for s in probe.stacks_mut() {
                at += s.set_params(&p[at..]);
            }
            let y = probe.infer(&input).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let coords: Vec<usize> = (0..params.len()).collect();
        let err = grad_check(loss, &params, &grads, 1e-6, &coords);
        assert!(err <= 1e-5, "{err}");
    }
}
