//! Local shape-context histograms.
//!
//! The neighborhood of a query is split into two distance shells (`[r1, r2)`
//! and `[r2, ∞)`) times a set of angular sectors. Neighbors closer than `r1`,
//! the query itself included, are ignored. Two sector layouts exist:
//!
//! * [`Layout::AzimuthElevation`]: `nbins_xy` azimuth sectors from
//!   `atan2(y, x)` crossed with `nbins_zy` sectors from `atan2(y, z)` folded
//!   into `[0, π)`, giving `2 * nbins_xy * nbins_zy` bins;
//! * [`Layout::Planar`]: azimuth sectors only, `2 * nbins_xy` bins.

mod index;

pub use index::SectorTree;

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    AzimuthElevation,
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScConfig {
    pub r1: f64,
    pub r2: f64,
    pub nbins_xy: usize,
    pub nbins_zy: usize,
    pub layout: Layout,
}

impl ScConfig {
    /// 8 partitions: r1 = 0.125, r2 = 2, 2 x 2 sectors.
    pub fn compact() -> Self {
        Self { r1: 0.125, r2: 2.0, nbins_xy: 2, nbins_zy: 2, layout: Layout::AzimuthElevation }
    }

    /// 32 partitions: r1 = 0.5, r2 = 4, 4 x 4 sectors.
    pub fn standard() -> Self {
        Self { r1: 0.5, r2: 4.0, nbins_xy: 4, nbins_zy: 4, layout: Layout::AzimuthElevation }
    }

    /// 32 partitions on the ground plane: 16 azimuth sectors per shell.
    pub fn planar() -> Self {
        Self { r1: 0.5, r2: 4.0, nbins_xy: 16, nbins_zy: 1, layout: Layout::Planar }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.r1 && self.r1 < self.r2) || !self.r2.is_finite() {
            return Err(Error::Config(format!("need 0 < r1 < r2, got r1={} r2={}", self.r1, self.r2)));
        }
        if self.nbins_xy == 0 || self.nbins_zy == 0 {
            return Err(Error::Config("sector counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sectors(&self) -> usize {
        match self.layout {
            Layout::AzimuthElevation => self.nbins_xy * self.nbins_zy,
            Layout::Planar => self.nbins_xy,
        }
    }

    pub fn n_bins(&self) -> usize {
        2 * self.sectors()
    }
}

impl Default for ScConfig {
    fn default() -> Self {
        Self::standard()
    }
}

#[inline]
pub(crate) fn azimuth(rel: &[f64; 3]) -> f64 {
    (rel[1].atan2(rel[0]) + TAU) % TAU
}

#[inline]
pub(crate) fn elevation_folded(rel: &[f64; 3]) -> f64 {
    (rel[1].atan2(rel[2]) + TAU) % PI
}

#[inline]
pub(crate) fn sector_bin(angle: f64, width: f64, n: usize) -> usize {
    ((angle / width).floor() as usize).min(n - 1)
}

/// Partition of a neighbor at offset `rel` (neighbor minus query), or `None`
/// when it lies inside `r1`.
pub fn partition(rel: &[f64; 3], cfg: &ScConfig) -> Option<usize> {
    let dist = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
    if !(dist >= cfg.r1) {
        return None;
    }
    let shell = usize::from(dist >= cfg.r2);
    let xy = sector_bin(azimuth(rel), TAU / cfg.nbins_xy as f64, cfg.nbins_xy);
    let sector = match cfg.layout {
        Layout::AzimuthElevation => {
            let zy = sector_bin(elevation_folded(rel), PI / cfg.nbins_zy as f64, cfg.nbins_zy);
            xy * cfg.nbins_zy + zy
        }
        Layout::Planar => xy,
    };
    Some(shell * cfg.sectors() + sector)
}

/// [`partition`] with the masked case encoded as −1.
pub fn partition_id(rel: &[f64; 3], cfg: &ScConfig) -> i64 {
    partition(rel, cfg).map_or(-1, |b| b as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    RawCounts,
    Distribution,
}

/// `rows x n_bins` histograms, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeContext {
    n_bins: usize,
    kind: Kind,
    values: Vec<f64>,
}

impl ShapeContext {
    pub fn from_rows(n_bins: usize, kind: Kind, values: Vec<f64>) -> Result<Self> {
        if n_bins == 0 || values.len() % n_bins != 0 {
            return Err(Error::Shape(format!("{} values do not form rows of {n_bins}", values.len())));
        }
        Ok(Self { n_bins, kind, values })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
    pub fn rows(&self) -> usize {
        self.values.len() / self.n_bins
    }
    pub fn kind(&self) -> Kind {
        self.kind
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_bins..(r + 1) * self.n_bins]
    }
}

/// Per-query bin counts over `neighbors`, computed with a [`SectorTree`].
pub fn raw_histograms(points: &[[f64; 3]], neighbors: &[[f64; 3]], cfg: &ScConfig) -> ShapeContext {
    let tree = SectorTree::build(neighbors);
    let n_bins = cfg.n_bins();
    let row = |q: &[f64; 3]| {
        let mut counts = vec![0u32; n_bins];
        tree.count_into(q, cfg, &mut counts);
        counts
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<u32>> = {
        use rayon::prelude::*;
        points.par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<u32>> = points.iter().map(row).collect();
    let values = rows.into_iter().flatten().map(f64::from).collect();
    ShapeContext { n_bins, kind: Kind::RawCounts, values }
}

/// L1-normalizes each row, scales by `sf_csp`, and applies a softmax.
/// All-zero rows become uniform.
pub fn finalize_distribution(raw: &ShapeContext, sf_csp: f64) -> ShapeContext {
    let n = raw.n_bins;
    let mut values = Vec::with_capacity(raw.values.len());
    for row in raw.values.chunks_exact(n) {
        let total: f64 = row.iter().sum();
        let scale = if total > 0.0 { sf_csp / total } else { 0.0 };
        let logits: Vec<f64> = row.iter().map(|v| v * scale).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        values.extend(exps.iter().map(|e| e / z));
    }
    ShapeContext { n_bins: n, kind: Kind::Distribution, values }
}
