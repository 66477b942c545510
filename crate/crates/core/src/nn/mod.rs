//! Dense layers with explicit backward passes, row normalization and a
//! finite-difference gradient checker.

mod encoder;
mod mlp;
mod tensor;

pub use encoder::{Encoder, EncoderCache, EncoderConfig, EncoderInput, ENCODER_BASE_INPUTS, POOL_BLOCKS};
pub use mlp::{Activation, Dense, ForwardCache, MlpStack};
pub use tensor::{gemm, matmul, Tensor};

use crate::error::{Error, Result};

const ZERO_NORM: f64 = 1e-12;

/// Saved state for the backward pass of [`l2_normalize`].
#[derive(Debug, Clone)]
pub struct NormalizeBackward {
    y: Tensor,
    norms: Vec<f64>,
}

impl NormalizeBackward {
    /// `dx = (dy - y (y · dy)) / ‖x‖`, row by row.
    pub fn backward(&self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for r in 0..dx.rows() {
            let y = self.y.row(r);
            let dot: f64 = y.iter().zip(dy.row(r)).map(|(a, b)| a * b).sum();
            let inv = 1.0 / self.norms[r];
            for (d, yv) in dx.row_mut(r).iter_mut().zip(y) {
                *d = (*d - yv * dot) * inv;
            }
        }
        dx
    }
}

/// Scales each row to unit Euclidean norm.
pub fn l2_normalize(x: &Tensor) -> Result<(Tensor, NormalizeBackward)> {
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > ZERO_NORM) {
            return Err(Error::ZeroNorm(r));
        }
        y.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((y.clone(), NormalizeBackward { y, norms }))
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Largest relative discrepancy between `analytic` and central differences of
/// `loss` over the sampled `coords`: `|a - fd| / max(1, |a|)`.
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], h: f64, coords: &[usize]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    grad_check_coords(
        |i, v| {
            let orig = p[i];
            p[i] = v;
            let out = loss(&p);
            p[i] = orig;
            out
        },
        params,
        analytic,
        h,
        coords,
    )
}

/// Like [`grad_check`], for losses that can move one coordinate at a time:
/// `loss(i, v)` evaluates with parameter `i` set to `v` and everything else at
/// `params`.
pub fn grad_check_coords<F>(mut loss: F, params: &[f64], analytic: &[f64], h: f64, coords: &[usize]) -> f64
where
    F: FnMut(usize, f64) -> f64,
{
    let mut worst = 0.0f64;
    for &i in coords {
        let up = loss(i, params[i] + h);
        let down = loss(i, params[i] - h);
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
