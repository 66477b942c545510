//! Scene preparation for training and the on-disk scene directory layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::derive_seed;
use crate::error::{Error, Result};
use crate::geom::{filter_ground, fuse, PointCloud, RigidTransform};
use crate::io::{read_cloud, write_binary_cloud};
use crate::nn::EncoderInput;
use crate::shape_context::{finalize_distribution, raw_histograms, ShapeContext};
use crate::synth::{generate_scene, PointClass, ScenePair, SceneSpec};
use crate::voxel::{matching_rows, sample_from, voxelize, CorrespondenceSet, VoxelGrid};

const SCENE_STREAM: u64 = 0x5ce4e;

/// Seed of the `index`-th generated scene of a run.
pub fn scene_seed(run_seed: u64, index: usize) -> u64 {
    derive_seed(run_seed, SCENE_STREAM, index as u64)
}

pub fn generate_scenes(template: &SceneSpec, run_seed: u64, count: usize) -> Result<Vec<ScenePair>> {
    (0..count).map(|i| generate_scene(&SceneSpec { seed: scene_seed(run_seed, i), ..template.clone() })).collect()
}

/// One ground-filtered view ready for the encoder, with its shape-context
/// targets.
#[derive(Debug, Clone)]
pub struct PreparedView {
    pub grid: VoxelGrid,
    pub input: EncoderInput,
    /// Finalized shape-context distribution of every row, computed among the
    /// voxel centroids.
    pub targets: ShapeContext,
}

#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub veh: PreparedView,
    pub fusion: PreparedView,
    /// `(vehicle row, fusion row)` pairs sharing a voxel.
    pub available: Vec<(usize, usize)>,
}

/// Shape-context targets of every row of `grid` among its centroids.
pub fn shape_targets(grid: &VoxelGrid, cfg: &RunConfig) -> ShapeContext {
    let pts = grid.centroids();
    finalize_distribution(&raw_histograms(pts, pts, &cfg.shape_context), cfg.sf_csp)
}

/// Drops ground points, then voxelizes, encodes the input rows and builds
/// targets.
pub fn prepare_view(cloud: &PointCloud, cfg: &RunConfig) -> PreparedView {
    let (cloud, _) = filter_ground(cloud, cfg.z_thd);
    let grid = voxelize(&cloud, &cfg.voxel);
    let input = EncoderInput::from_grid(&grid, &cfg.encoder.pool_radii);
    let targets = shape_targets(&grid, cfg);
    PreparedView { grid, input, targets }
}

pub fn prepare_scene(pair: &ScenePair, cfg: &RunConfig) -> Result<PreparedScene> {
    let fusion = fuse(&pair.veh, &pair.inf, &pair.t_veh_inf)?;
    let veh = prepare_view(&pair.veh, cfg);
    let fusion = prepare_view(&fusion, cfg);
    let available = matching_rows(&veh.grid, &fusion.grid);
    Ok(PreparedScene { veh, fusion, available })
}

pub fn prepare_scenes(pairs: &[ScenePair], cfg: &RunConfig) -> Result<Vec<PreparedScene>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pairs.par_iter().map(|p| prepare_scene(p, cfg)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    pairs.iter().map(|p| prepare_scene(p, cfg)).collect()
}

/// Rows sampled from one scene for one step.
#[derive(Debug, Clone)]
pub struct SceneDraw {
    pub pairs: CorrespondenceSet,
    pub csp_veh_rows: Vec<usize>,
    pub csp_fusion_rows: Vec<usize>,
}

fn sample_rows(rows: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, rows, n.min(rows)).into_vec();
    picked.sort_unstable();
    picked
}

impl SceneDraw {
    /// Contrastive pairs and the two shape-context row sets are drawn
    /// independently from `seed`.
    pub fn sample(scene: &PreparedScene, n1: usize, n2: usize, seed: u64) -> Result<Self> {
        let pairs = sample_from(&scene.available, n1, derive_seed(seed, 1, 0))?;
        if pairs.len() < 2 {
            return Err(Error::TooFewPairs(pairs.len()));
        }
        Ok(Self {
            pairs,
            csp_veh_rows: sample_rows(scene.veh.grid.len(), n2, derive_seed(seed, 2, 0)),
            csp_fusion_rows: sample_rows(scene.fusion.grid.len(), n2, derive_seed(seed, 3, 0)),
        })
    }
}

/// Majority class of the points in each voxel; ties go to the lower class.
pub fn voxel_labels(cloud: &PointCloud, grid: &VoxelGrid, labels: &[PointClass]) -> Result<Vec<usize>> {
    let ids = cloud.source_ids().ok_or_else(|| Error::Format("cloud carries no source ids".into()))?;
    let mut votes = vec![[0u32; 3]; grid.len()];
    for (id, v) in ids.iter().zip(grid.point_to_voxel()) {
        if let Some(r) = v {
            let class = labels.get(*id as usize).ok_or_else(|| Error::Format(format!("source id {id} has no label")))?;
            votes[*r as usize][*class as usize] += 1;
        }
    }
    Ok(votes.iter().map(|v| (0..3).fold(0, |best, c| if v[c] > v[best] { c } else { best })).collect())
}

fn format_transform(t: &RigidTransform) -> String {
    let mut s = String::new();
    for row in t.rotation() {
        writeln!(s, "{:.12} {:.12} {:.12}", row[0], row[1], row[2]).unwrap();
    }
    let p = t.translation();
    writeln!(s, "{:.12} {:.12} {:.12}", p[0], p[1], p[2]).unwrap();
    s
}

fn parse_transform(text: &str) -> Result<RigidTransform> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| Error::Format(format!("bad transform entry {w:?}"))))
        .collect::<Result<_>>()?;
    if v.len() != 12 {
        return Err(Error::Format(format!("transform needs 12 numbers, found {}", v.len())));
    }
    let r = [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]];
    RigidTransform::new(r, [v[9], v[10], v[11]]).map_err(|e| Error::Format(e.to_string()))
}

fn write_ids(path: &Path, ids: Option<&[u32]>) -> Result<()> {
    let mut s = String::new();
    for id in ids.unwrap_or(&[]) {
        writeln!(s, "{id}").unwrap();
    }
    fs::write(path, s).map_err(Error::at(path))
}

fn read_ids(path: &Path) -> Result<Vec<u32>> {
    let text = fs::read_to_string(path).map_err(Error::at(path))?;
    text.split_whitespace().map(|w| w.parse().map_err(|_| Error::Format(format!("{}: bad id {w:?}", path.display())))).collect()
}

/// Writes one scene pair as `veh.co3p`, `inf.co3p`, `t.txt`, `labels.txt`
/// and the per-point source ids `veh_ids.txt`, `inf_ids.txt`.
pub fn write_scene_dir(dir: &Path, pair: &ScenePair) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::at(dir))?;
    write_binary_cloud(&dir.join("veh.co3p"), &pair.veh)?;
    write_binary_cloud(&dir.join("inf.co3p"), &pair.inf)?;
    let t_path = dir.join("t.txt");
    fs::write(&t_path, format_transform(&pair.t_veh_inf)).map_err(Error::at(&t_path))?;
    let mut labels = String::new();
    for (id, c) in pair.labels.iter().enumerate() {
        writeln!(labels, "{id} {}", c.name()).unwrap();
    }
    let l_path = dir.join("labels.txt");
    fs::write(&l_path, labels).map_err(Error::at(&l_path))?;
    write_ids(&dir.join("veh_ids.txt"), pair.veh.source_ids())?;
    write_ids(&dir.join("inf_ids.txt"), pair.inf.source_ids())
}

pub fn read_scene_dir(dir: &Path) -> Result<ScenePair> {
    let veh = read_cloud(&dir.join("veh.co3p"))?.with_source_ids(read_ids(&dir.join("veh_ids.txt"))?)?;
    let inf = read_cloud(&dir.join("inf.co3p"))?.with_source_ids(read_ids(&dir.join("inf_ids.txt"))?)?;
    let t_path = dir.join("t.txt");
    let t_veh_inf = parse_transform(&fs::read_to_string(&t_path).map_err(Error::at(&t_path))?)?;
    let l_path = dir.join("labels.txt");
    let mut labels = Vec::new();
    for (n, line) in fs::read_to_string(&l_path).map_err(Error::at(&l_path))?.lines().enumerate() {
        let mut it = line.split_whitespace();
        let (Some(id), Some(name), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Format(format!("{}:{}: expected `id class`", l_path.display(), n + 1)));
        };
        if id.parse::<usize>().ok() != Some(labels.len()) {
            return Err(Error::Format(format!("{}:{}: ids must be consecutive from 0", l_path.display(), n + 1)));
        }
        labels.push(PointClass::from_name(name).ok_or_else(|| Error::Format(format!("unknown class {name:?}")))?);
    }
    Ok(ScenePair { veh, inf, t_veh_inf, labels })
}

/// Scene subdirectories `scene_0000`, `scene_0001`, ... in order.
pub fn write_scene_set(dir: &Path, pairs: &[ScenePair]) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        write_scene_dir(&dir.join(format!("scene_{i:04}")), p)?;
    }
    Ok(())
}

pub fn read_scene_set(dir: &Path) -> Result<Vec<ScenePair>> {
    let mut subdirs: Vec<_> = fs::read_dir(dir)
        .map_err(Error::at(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("scene_")))
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Format(format!("{}: no scene_* directories", dir.display())));
    }
    subdirs.iter().map(|d| read_scene_dir(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.scene.extent = 8.0;
        cfg.scene.n_objects = 3;
        cfg
    }

    #[test]
    fn prepared_scene_is_consistent() {
        let cfg = small_cfg();
        let pair = generate_scene(&SceneSpec { seed: 3, ..cfg.scene.clone() }).unwrap();
        let s = prepare_scene(&pair, &cfg).unwrap();
        assert!(s.available.len() >= 2);
        for (v, f) in &s.available {
            assert_eq!(s.veh.grid.indices()[*v], s.fusion.grid.indices()[*f]);
        }
        assert_eq!(s.fusion.targets.rows(), s.fusion.grid.len());
        for r in 0..s.fusion.targets.rows() {
            assert!((s.fusion.targets.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(s.veh.grid.centroids().iter().all(|c| c[2] >= cfg.z_thd));
        let draw = SceneDraw::sample(&s, 16, 8, 1).unwrap();
        assert_eq!(draw.pairs.len(), 16.min(s.available.len()));
        assert_eq!(draw.csp_veh_rows.len(), 8.min(s.veh.grid.len()));
    }

    #[test]
    fn ground_only_scene_has_no_pairs() {
        let mut cfg = small_cfg();
        cfg.scene.n_objects = 0;
        let pair = generate_scene(&SceneSpec { seed: 1, ..cfg.scene.clone() }).unwrap();
        let s = prepare_scene(&pair, &cfg).unwrap();
        assert!(s.available.is_empty());
        assert_eq!(s.veh.grid.len(), 0);
        assert!(matches!(SceneDraw::sample(&s, 8, 8, 0), Err(Error::EmptyCorrespondence)));
    }

    #[test]
    fn voxel_majority_labels() {
        let params = crate::voxel::VoxelParams { voxel_size: [1.0; 3], range_min: [0.0; 3], range_max: [4.0; 3] };
        let cloud = PointCloud::new(vec![[0.1; 3], [0.2; 3], [0.3; 3], [2.5; 3]], vec![0.0; 4], 1)
            .unwrap()
            .with_source_ids(vec![0, 1, 2, 3])
            .unwrap();
        let labels = [PointClass::Vehicle, PointClass::Pedestrian, PointClass::Pedestrian, PointClass::Ground];
        let grid = voxelize(&cloud, &params);
        assert_eq!(voxel_labels(&cloud, &grid, &labels).unwrap(), vec![2, 0]);
    }

    #[test]
    fn scene_dir_round_trip() {
        let cfg = small_cfg();
        let pair = generate_scene(&SceneSpec { seed: 5, ..cfg.scene.clone() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_scene_set(dir.path(), std::slice::from_ref(&pair)).unwrap();
        let back = read_scene_set(dir.path()).unwrap().remove(0);
        assert_eq!(back.labels, pair.labels);
        assert_eq!(back.veh.source_ids(), pair.veh.source_ids());
        assert_eq!(back.inf.len(), pair.inf.len());
        assert!(back.t_veh_inf.max_abs_diff(&pair.t_veh_inf) < 1e-11);
        for (a, b) in back.veh.positions().iter().zip(pair.veh.positions()) {
            for k in 0..3 {
                assert_eq!(a[k], b[k] as f32 as f64);
            }
        }
    }
}
