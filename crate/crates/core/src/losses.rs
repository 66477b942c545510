//! Pretraining objectives with analytic gradients.
//!
//! * [`co2_loss`]: InfoNCE between vehicle anchors and fusion candidates.
//! * [`csp_loss`]: `KL(p ‖ q)` between predicted and geometric shape contexts.
//! * [`total_loss`]: `Σ_scenes L_co2 + w_csp · L_csp` through both heads.

use crate::error::{Error, Result};
use crate::nn::{l2_normalize, matmul, softmax_rows, MlpStack, Tensor};
use crate::shape_context::ShapeContext;
use crate::voxel::CorrespondenceSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenominatorMode {
    /// `Σ_i exp(z_veh^n · z_fusion^i / τ)`: every fusion sample is a candidate.
    AnchorNegatives,
    /// `Σ_i exp(z_veh^i · z_fusion^i / τ)`: positives only, no cross terms.
    DiagonalLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Co2Config {
    pub tau: f64,
    pub mode: DenominatorMode,
    /// Average the vehicle-anchored and fusion-anchored losses.
    pub bidirectional: bool,
}

impl Default for Co2Config {
    fn default() -> Self {
        Self { tau: 0.07, mode: DenominatorMode::AnchorNegatives, bidirectional: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CspConfig {
    pub n_bin: usize,
    pub n2: usize,
    pub w_csp: f64,
}

impl Default for CspConfig {
    fn default() -> Self {
        Self { n_bin: 32, n2: 2048, w_csp: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Both,
    Co2Only,
    CspOnly,
}

impl Ablation {
    pub fn uses_co2(self) -> bool {
        self != Ablation::CspOnly
    }
    pub fn uses_csp(self) -> bool {
        self != Ablation::Co2Only
    }
}

#[derive(Debug, Clone)]
pub struct Co2Output {
    pub loss: f64,
    pub d_veh: Tensor,
    pub d_fusion: Tensor,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over rows of `LSE(logits[n, :]) - logits[n, n]` and its gradient with
/// respect to the logits.
pub fn info_nce_logits(logits: &Tensor) -> (f64, Tensor) {
    let n = logits.rows();
    let mut grad = Tensor::zeros(n, logits.cols());
    let mut total = 0.0;
    for r in 0..n {
        let row = logits.row(r);
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[r];
        for (g, l) in grad.row_mut(r).iter_mut().zip(row) {
            *g = (l - lse).exp() / n as f64;
        }
        grad.row_mut(r)[r] -= 1.0 / n as f64;
    }
    (total / n as f64, grad)
}

fn transpose(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.cols(), t.rows());
    for r in 0..t.rows() {
        for (c, v) in t.row(r).iter().enumerate() {
            out.row_mut(c)[r] = *v;
        }
    }
    out
}

/// Contrastive loss over `N1` paired unit rows (row `n` of each side is a
/// positive pair).
pub fn co2_loss(z_veh: &Tensor, z_fusion: &Tensor, cfg: &Co2Config) -> Result<Co2Output> {
    if z_veh.shape() != z_fusion.shape() {
        return Err(Error::Shape(format!("paired embeddings {:?} vs {:?}", z_veh.shape(), z_fusion.shape())));
    }
    let n = z_veh.rows();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    if !(cfg.tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {}", cfg.tau)));
    }
    let inv_tau = 1.0 / cfg.tau;
    let mut logits = matmul(z_veh, false, z_fusion, true)?;
    logits.scale(inv_tau);

    let (loss, mut d_logits) = match cfg.mode {
        DenominatorMode::AnchorNegatives => {
            let (l_fwd, g_fwd) = info_nce_logits(&logits);
            if cfg.bidirectional {
                let (l_bwd, g_bwd) = info_nce_logits(&transpose(&logits));
                let mut g = g_fwd;
                g.add_assign(&transpose(&g_bwd));
                g.scale(0.5);
                (0.5 * (l_fwd + l_bwd), g)
            } else {
                (l_fwd, g_fwd)
            }
        }
        DenominatorMode::DiagonalLiteral => {
            let diag: Vec<f64> = (0..n).map(|i| logits.get(i, i)).collect();
            let lse = log_sum_exp(diag.iter().copied());
            let mean_pos = diag.iter().sum::<f64>() / n as f64;
            let mut g = Tensor::zeros(n, n);
            for (i, d) in diag.iter().enumerate() {
                g.row_mut(i)[i] = (d - lse).exp() - 1.0 / n as f64;
            }
            (lse - mean_pos, g)
        }
    };
    d_logits.scale(inv_tau);
    let d_veh = matmul(&d_logits, false, z_fusion, false)?;
    let d_fusion = matmul(&d_logits, true, z_veh, false)?;
    Ok(Co2Output { loss, d_veh, d_fusion })
}

/// Mean cosine of positive pairs and of all off-diagonal pairs.
pub fn pair_cosines(z_veh: &Tensor, z_fusion: &Tensor) -> Result<(f64, f64)> {
    let s = matmul(z_veh, false, z_fusion, true)?;
    let n = s.rows();
    let pos = (0..n).map(|i| s.get(i, i)).sum::<f64>() / n.max(1) as f64;
    let off = n * n.saturating_sub(1);
    let neg = if off == 0 { 0.0 } else { (s.data().iter().sum::<f64>() - pos * n as f64) / off as f64 };
    Ok((pos, neg))
}

#[derive(Debug, Clone)]
pub struct CspOutput {
    pub loss: f64,
    /// Gradient with respect to the logits `p` was produced from.
    pub d_logits: Tensor,
}

/// Mean over rows of `KL(p ‖ q) = Σ_m p_m ln(p_m / q_m)` where `p` is a
/// softmax output.
pub fn csp_loss(p: &Tensor, q: &Tensor) -> Result<CspOutput> {
    if p.shape() != q.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", p.shape(), q.shape())));
    }
    for r in 0..q.rows() {
        if let Some(b) = q.row(r).iter().position(|v| !(*v > 0.0)) {
            return Err(Error::NonPositiveTarget { row: r, bin: b });
        }
    }
    let n = p.rows();
    if n == 0 {
        return Ok(CspOutput { loss: 0.0, d_logits: Tensor::zeros(0, p.cols()) });
    }
    let mut d_logits = Tensor::zeros(n, p.cols());
    let mut total = 0.0;
    for r in 0..n {
        let log_ratio: Vec<f64> =
            p.row(r).iter().zip(q.row(r)).map(|(pv, qv)| if *pv > 0.0 { (pv / qv).ln() } else { 0.0 }).collect();
        let kl: f64 = p.row(r).iter().zip(&log_ratio).map(|(pv, lr)| pv * lr).sum();
        total += kl;
        for ((g, pv), lr) in d_logits.row_mut(r).iter_mut().zip(p.row(r)).zip(&log_ratio) {
            *g = pv * (lr - kl) / n as f64;
        }
    }
    Ok(CspOutput { loss: total / n as f64, d_logits })
}

/// The two projection heads on top of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    /// Into the common contrastive space.
    pub projection: MlpStack,
    /// Into shape-context logits.
    pub shape: MlpStack,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub co2: Co2Config,
    pub csp: CspConfig,
    pub ablation: Ablation,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { co2: Co2Config::default(), csp: CspConfig::default(), ablation: Ablation::Both }
    }
}

/// Encoded features and sampled rows for one scene pair.
#[derive(Debug, Clone, Copy)]
pub struct SceneFeatures<'a> {
    pub veh: &'a Tensor,
    pub fusion: &'a Tensor,
    pub pairs: &'a CorrespondenceSet,
    pub csp_veh_rows: &'a [usize],
    pub csp_fusion_rows: &'a [usize],
    pub q_veh: &'a ShapeContext,
    pub q_fusion: &'a ShapeContext,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SceneTerms {
    pub co2: f64,
    pub csp: f64,
    pub pos_cos: f64,
    pub neg_cos: f64,
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: f64,
    /// Sums over the batch; `value = co2 + w_csp * csp`.
    pub co2: f64,
    pub csp: f64,
    pub scenes: Vec<SceneTerms>,
    pub d_veh: Vec<Tensor>,
    pub d_fusion: Vec<Tensor>,
}

fn gather_targets(q: &ShapeContext, rows: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(rows.len() * q.n_bins());
    for r in rows {
        data.extend_from_slice(q.row(*r));
    }
    Tensor::from_vec(rows.len(), q.n_bins(), data).unwrap()
}

/// KL term for one view; adds the head gradient into `head` and returns the
/// loss together with `dL/d(encoded rows)`.
fn shape_branch(head: &mut MlpStack, enc: &Tensor, rows: &[usize], q: &ShapeContext, scale: f64) -> Result<(f64, Tensor)> {
    let (logits, cache) = head.forward(&enc.gather_rows(rows))?;
    let out = csp_loss(&softmax_rows(&logits), &gather_targets(q, rows))?;
    let mut d = out.d_logits;
    d.scale(scale);
    let d_rows = head.backward(&cache, &d)?;
    Ok((out.loss, d_rows))
}

pub fn total_loss(batch: &[SceneFeatures<'_>], heads: &mut Heads, cfg: &LossConfig) -> Result<TotalLoss> {
    let w = cfg.csp.w_csp;
    if heads.shape.output_dim() != cfg.csp.n_bin {
        return Err(Error::Shape(format!(
            "shape head emits {} bins, config says {}",
            heads.shape.output_dim(),
            cfg.csp.n_bin
        )));
    }
    let mut out = TotalLoss { value: 0.0, co2: 0.0, csp: 0.0, scenes: Vec::new(), d_veh: Vec::new(), d_fusion: Vec::new() };
    for item in batch {
        for q in [item.q_veh, item.q_fusion] {
            if q.n_bins() != cfg.csp.n_bin {
                return Err(Error::Shape(format!("targets have {} bins, config says {}", q.n_bins(), cfg.csp.n_bin)));
            }
        }
        let mut d_veh = Tensor::zeros(item.veh.rows(), item.veh.cols());
        let mut d_fusion = Tensor::zeros(item.fusion.rows(), item.fusion.cols());
        let mut terms = SceneTerms::default();

        let veh_rows: Vec<usize> = item.pairs.pairs.iter().map(|p| p.0).collect();
        let fus_rows: Vec<usize> = item.pairs.pairs.iter().map(|p| p.1).collect();
        let (pv, cache_v) = heads.projection.forward(&item.veh.gather_rows(&veh_rows))?;
        let (pf, cache_f) = heads.projection.forward(&item.fusion.gather_rows(&fus_rows))?;
        let (zv, norm_v) = l2_normalize(&pv)?;
        let (zf, norm_f) = l2_normalize(&pf)?;
        (terms.pos_cos, terms.neg_cos) = pair_cosines(&zv, &zf)?;
        if cfg.ablation.uses_co2() {
            let co2 = co2_loss(&zv, &zf, &cfg.co2)?;
            terms.co2 = co2.loss;
            let gv = heads.projection.backward(&cache_v, &norm_v.backward(&co2.d_veh))?;
            let gf = heads.projection.backward(&cache_f, &norm_f.backward(&co2.d_fusion))?;
            d_veh.scatter_add_rows(&veh_rows, &gv);
            d_fusion.scatter_add_rows(&fus_rows, &gf);
        }

        if cfg.ablation.uses_csp() {
            let (lv, gv) = shape_branch(&mut heads.shape, item.veh, item.csp_veh_rows, item.q_veh, 0.5 * w)?;
            let (lf, gf) = shape_branch(&mut heads.shape, item.fusion, item.csp_fusion_rows, item.q_fusion, 0.5 * w)?;
            terms.csp = 0.5 * (lv + lf);
            d_veh.scatter_add_rows(item.csp_veh_rows, &gv);
            d_fusion.scatter_add_rows(item.csp_fusion_rows, &gf);
        }

        out.co2 += terms.co2;
        out.csp += terms.csp;
        out.scenes.push(terms);
        out.d_veh.push(d_veh);
        out.d_fusion.push(d_fusion);
    }
    out.value = out.co2 + w * out.csp;
    Ok(out)
}

/// The value of [`total_loss`] without any backward pass.
pub fn total_loss_value(batch: &[SceneFeatures<'_>], heads: &Heads, cfg: &LossConfig) -> Result<f64> {
    let (mut co2, mut csp) = (0.0, 0.0);
    for item in batch {
        if cfg.ablation.uses_co2() {
            let veh_rows: Vec<usize> = item.pairs.pairs.iter().map(|p| p.0).collect();
            let fus_rows: Vec<usize> = item.pairs.pairs.iter().map(|p| p.1).collect();
            let (zv, _) = l2_normalize(&heads.projection.infer(&item.veh.gather_rows(&veh_rows))?)?;
            let (zf, _) = l2_normalize(&heads.projection.infer(&item.fusion.gather_rows(&fus_rows))?)?;
            co2 += co2_loss(&zv, &zf, &cfg.co2)?.loss;
        }
        if cfg.ablation.uses_csp() {
            let branch = |enc: &Tensor, rows: &[usize], q: &ShapeContext| -> Result<f64> {
                let p = softmax_rows(&heads.shape.infer(&enc.gather_rows(rows))?);
                Ok(csp_loss(&p, &gather_targets(q, rows))?.loss)
            };
            csp += 0.5 * (branch(item.veh, item.csp_veh_rows, item.q_veh)? + branch(item.fusion, item.csp_fusion_rows, item.q_fusion)?);
        }
    }
    Ok(co2 + cfg.csp.w_csp * csp)
}
