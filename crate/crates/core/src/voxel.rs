//! Sparse voxelization and voxel-index correspondences between two grids.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

pub type VoxelIndex = [i32; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelParams {
    pub voxel_size: [f64; 3],
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
}

impl Default for VoxelParams {
    fn default() -> Self {
        Self { voxel_size: [0.4, 0.4, 0.4], range_min: [-40.0, -40.0, -3.0], range_max: [40.0, 40.0, 3.0] }
    }
}

impl VoxelParams {
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.voxel_size[k] > 0.0) || !self.voxel_size[k].is_finite() {
                return Err(Error::Config(format!("voxel_size[{k}] must be positive")));
            }
            if !(self.range_min[k] < self.range_max[k]) {
                return Err(Error::Config(format!("range_min[{k}] must be below range_max[{k}]")));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, p: &[f64; 3]) -> Option<VoxelIndex> {
        let mut idx = [0i32; 3];
        for k in 0..3 {
            if p[k] < self.range_min[k] || p[k] >= self.range_max[k] {
                return None;
            }
            idx[k] = ((p[k] - self.range_min[k]) / self.voxel_size[k]).floor() as i32;
        }
        Some(idx)
    }

    /// Lower corner of a voxel cell.
    pub fn cell_min(&self, idx: &VoxelIndex) -> [f64; 3] {
        std::array::from_fn(|k| self.range_min[k] + idx[k] as f64 * self.voxel_size[k])
    }
}

/// Occupied voxels in lexicographic index order.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    params: VoxelParams,
    indices: Vec<VoxelIndex>,
    centroids: Vec<[f64; 3]>,
    features: Vec<f64>,
    feature_width: usize,
    counts: Vec<u32>,
    point_to_voxel: Vec<Option<u32>>,
    lookup: HashMap<VoxelIndex, u32>,
}

impl VoxelGrid {
    pub fn params(&self) -> &VoxelParams {
        &self.params
    }
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
    pub fn indices(&self) -> &[VoxelIndex] {
        &self.indices
    }
    pub fn centroids(&self) -> &[[f64; 3]] {
        &self.centroids
    }
    pub fn features(&self) -> &[f64] {
        &self.features
    }
    pub fn feature_width(&self) -> usize {
        self.feature_width
    }
    pub fn feature(&self, row: usize) -> &[f64] {
        &self.features[row * self.feature_width..(row + 1) * self.feature_width]
    }
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
    /// Voxel row for each input point, `None` when the point was out of range.
    pub fn point_to_voxel(&self) -> &[Option<u32>] {
        &self.point_to_voxel
    }
    pub fn row_of(&self, idx: &VoxelIndex) -> Option<usize> {
        self.lookup.get(idx).map(|r| *r as usize)
    }
}

pub fn voxelize(cloud: &PointCloud, params: &VoxelParams) -> VoxelGrid {
    let d = cloud.feature_width();
    let mut slot_of: HashMap<VoxelIndex, usize> = HashMap::new();
    let mut order: Vec<VoxelIndex> = Vec::new();
    let mut point_slot = Vec::with_capacity(cloud.len());
    for p in cloud.positions() {
        point_slot.push(params.index_of(p).map(|idx| {
            *slot_of.entry(idx).or_insert_with(|| {
                order.push(idx);
                order.len() - 1
            })
        }));
    }

    // Canonical row order: sorted by index, so the grid does not depend on
    // input point order.
    let mut sorted: Vec<usize> = (0..order.len()).collect();
    sorted.sort_unstable_by_key(|s| order[*s]);
    let mut row_of_slot = vec![0u32; order.len()];
    for (row, slot) in sorted.iter().enumerate() {
        row_of_slot[*slot] = row as u32;
    }

    let m = order.len();
    let mut sums = vec![[0.0f64; 3]; m];
    let mut feats = vec![0.0f64; m * d];
    let mut counts = vec![0u32; m];
    let point_to_voxel: Vec<Option<u32>> = point_slot.iter().map(|s| s.map(|s| row_of_slot[s])).collect();
    for (i, row) in point_to_voxel.iter().enumerate() {
        if let Some(r) = row {
            let r = *r as usize;
            let p = cloud.positions()[i];
            for k in 0..3 {
                sums[r][k] += p[k];
            }
            for (acc, f) in feats[r * d..(r + 1) * d].iter_mut().zip(cloud.feature(i)) {
                *acc += f;
            }
            counts[r] += 1;
        }
    }
    let centroids = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| {
            let c = *c as f64;
            [s[0] / c, s[1] / c, s[2] / c]
        })
        .collect();
    for (r, c) in counts.iter().enumerate() {
        for v in &mut feats[r * d..(r + 1) * d] {
            *v /= *c as f64;
        }
    }
    let indices: Vec<VoxelIndex> = sorted.iter().map(|s| order[*s]).collect();
    let lookup = indices.iter().enumerate().map(|(r, idx)| (*idx, r as u32)).collect();
    VoxelGrid {
        params: *params,
        indices,
        centroids,
        features: feats,
        feature_width: d,
        counts,
        point_to_voxel,
        lookup,
    }
}

/// Positive pairs `(vehicle row, fusion row)` sharing one voxel index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
    pub rng_seed: u64,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// All vehicle rows whose voxel index is also occupied in the fusion grid.
pub fn matching_rows(veh: &VoxelGrid, fusion: &VoxelGrid) -> Vec<(usize, usize)> {
    veh.indices().iter().enumerate().filter_map(|(r, idx)| fusion.row_of(idx).map(|f| (r, f))).collect()
}

/// Samples `min(n1, available)` correspondences uniformly without replacement.
///
/// Both grids are expected to come from ground-filtered clouds.
pub fn sample_correspondences(veh: &VoxelGrid, fusion: &VoxelGrid, n1: usize, seed: u64) -> Result<CorrespondenceSet> {
    let available = matching_rows(veh, fusion);
    sample_from(&available, n1, seed)
}

/// Same as [`sample_correspondences`] with the candidate list precomputed.
pub fn sample_from(available: &[(usize, usize)], n1: usize, seed: u64) -> Result<CorrespondenceSet> {
    if available.is_empty() {
        return Err(Error::EmptyCorrespondence);
    }
    let take = n1.min(available.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, available.len(), take);
    Ok(CorrespondenceSet { pairs: picks.iter().map(|i| available[i]).collect(), rng_seed: seed })
}

/// Rows within Chebyshev distance `radius` (in cells) of each voxel, itself
/// included, stored CSR-style. Each member also carries its cell offset from
/// the center divided by `radius`, so every component lies in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    offsets: Vec<usize>,
    members: Vec<u32>,
    directions: Vec<[f64; 3]>,
}

impl Neighborhood {
    pub fn build(grid: &VoxelGrid, radius: i32) -> Self {
        let mut offsets = Vec::with_capacity(grid.len() + 1);
        let mut members = Vec::new();
        let mut directions = Vec::new();
        let scale = 1.0 / radius.max(1) as f64;
        offsets.push(0);
        for idx in grid.indices() {
            for dx in -radius..=radius {
                for dy in -radius..=radius {
                    for dz in -radius..=radius {
                        if let Some(r) = grid.row_of(&[idx[0] + dx, idx[1] + dy, idx[2] + dz]) {
                            members.push(r as u32);
                            directions.push([dx as f64 * scale, dy as f64 * scale, dz as f64 * scale]);
                        }
                    }
                }
            }
            offsets.push(members.len());
        }
        Self { offsets, members, directions }
    }

    /// Builds from explicit `(member, direction)` lists, one per row.
    pub fn from_lists(lists: Vec<Vec<(u32, [f64; 3])>>) -> Self {
        let mut offsets = vec![0];
        let mut members = Vec::new();
        let mut directions = Vec::new();
        for l in lists {
            for (m, d) in l {
                members.push(m);
                directions.push(d);
            }
            offsets.push(members.len());
        }
        Self { offsets, members, directions }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn of(&self, row: usize) -> &[u32] {
        &self.members[self.offsets[row]..self.offsets[row + 1]]
    }

    pub fn directions_of(&self, row: usize) -> &[[f64; 3]] {
        &self.directions[self.offsets[row]..self.offsets[row + 1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{fuse, RigidTransform};
    use rand::{Rng, SeedableRng};
    use std::collections::HashSet;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, half: f64) -> PointCloud {
        let positions = (0..n)
            .map(|_| [rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-2.9..2.9)])
            .collect();
        PointCloud::new(positions, (0..n).map(|_| rng.random()).collect(), 1).unwrap()
    }

    #[test]
    fn single_point_voxel() {
        let params = VoxelParams { voxel_size: [0.1; 3], range_min: [0.0; 3], range_max: [10.0; 3] };
        let cloud = PointCloud::new(vec![[0.05, 0.05, 0.05]], vec![0.7], 1).unwrap();
        let g = voxelize(&cloud, &params);
        assert_eq!(g.len(), 1);
        assert_eq!(g.indices()[0], [0, 0, 0]);
        assert_eq!(g.centroids()[0], [0.05, 0.05, 0.05]);
    }

    #[test]
    fn mean_feature() {
        let params = VoxelParams { voxel_size: [0.1; 3], range_min: [0.0; 3], range_max: [10.0; 3] };
        let cloud = PointCloud::new(vec![[0.01, 0.01, 0.01], [0.02, 0.03, 0.04]], vec![0.2, 0.4], 1).unwrap();
        let g = voxelize(&cloud, &params);
        assert_eq!(g.len(), 1);
        assert!((g.feature(0)[0] - 0.3).abs() < 1e-15);
        assert_eq!(g.counts(), &[2]);
    }

    #[test]
    fn out_of_range_dropped() {
        let params = VoxelParams::default();
        let cloud =
            PointCloud::new(vec![[0.0, 0.0, 3.0], [0.0, 0.0, -3.5], [1.0, 1.0, 1.0]], vec![0.0; 3], 1).unwrap();
        let g = voxelize(&cloud, &params);
        assert_eq!(g.len(), 1);
        assert_eq!(g.point_to_voxel(), &[None, None, Some(0)]);
    }

    #[test]
    fn grid_invariants_against_hash_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 10_000, 45.0);
        let params = VoxelParams::default();
        let g = voxelize(&cloud, &params);

        let mut brute = HashSet::new();
        let mut in_range = 0usize;
        for p in cloud.positions() {
            let inside = (0..3).all(|k| p[k] >= params.range_min[k] && p[k] < params.range_max[k]);
            if inside {
                in_range += 1;
                brute.insert([0, 1, 2].map(|k| ((p[k] - params.range_min[k]) / params.voxel_size[k]).floor() as i32));
            }
        }
        assert_eq!(g.len(), brute.len());
        assert_eq!(g.counts().iter().map(|c| *c as usize).sum::<usize>(), in_range);
        assert_eq!(g.indices().iter().copied().collect::<HashSet<_>>().len(), g.len());
        for (idx, c) in g.indices().iter().zip(g.centroids()) {
            let lo = params.cell_min(idx);
            for k in 0..3 {
                assert!(c[k] >= lo[k] - 1e-9 && c[k] <= lo[k] + params.voxel_size[k] + 1e-9);
            }
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = random_cloud(&mut rng, 3000, 5.0);
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let shuffled = PointCloud::new(
            order.iter().map(|i| cloud.positions()[*i]).collect(),
            order.iter().map(|i| cloud.features()[*i]).collect(),
            1,
        )
        .unwrap();
        let (a, b) = (voxelize(&cloud, &VoxelParams::default()), voxelize(&shuffled, &VoxelParams::default()));
        assert_eq!(a.indices(), b.indices());
        assert_eq!(a.counts(), b.counts());
        for r in 0..a.len() {
            assert!((a.feature(r)[0] - b.feature(r)[0]).abs() <= 1e-12);
            for k in 0..3 {
                assert!((a.centroids()[r][k] - b.centroids()[r][k]).abs() <= 1e-12);
            }
        }
    }

    fn scene_grids(seed: u64) -> (VoxelGrid, VoxelGrid, PointCloud) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let veh = random_cloud(&mut rng, 400, 8.0);
        let inf = random_cloud(&mut rng, 400, 8.0);
        let t = RigidTransform::from_yaw(0.4, [1.0, -2.0, 0.0]);
        let fusion = fuse(&veh, &inf, &t).unwrap();
        let p = VoxelParams::default();
        (voxelize(&veh, &p), voxelize(&fusion, &p), inf)
    }

    #[test]
    fn every_vehicle_voxel_has_a_partner() {
        for seed in 0..10 {
            let (veh, fusion, _) = scene_grids(seed);
            assert_eq!(matching_rows(&veh, &fusion).len(), veh.len());
            let set = sample_correspondences(&veh, &fusion, 2048, seed).unwrap();
            assert_eq!(set.len(), veh.len().min(2048));
            let rows: HashSet<usize> = set.pairs.iter().map(|p| p.0).collect();
            assert_eq!(rows.len(), set.len());
            for (v, f) in &set.pairs {
                assert_eq!(veh.indices()[*v], fusion.indices()[*f]);
            }
        }
    }

    #[test]
    fn clamps_to_available() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = VoxelParams::default();
        // 100 distinct cells along x.
        let veh = PointCloud::new((0..100).map(|i| [-39.8 + 0.4 * i as f64, 0.1, 0.1]).collect(), vec![0.5; 100], 1)
            .unwrap();
        let inf = random_cloud(&mut rng, 50, 10.0);
        let fusion = fuse(&veh, &inf, &RigidTransform::identity()).unwrap();
        let (gv, gf) = (voxelize(&veh, &params), voxelize(&fusion, &params));
        assert_eq!(gv.len(), 100);
        assert_eq!(sample_correspondences(&gv, &gf, 2048, 1).unwrap().len(), 100);
    }

    #[test]
    fn deterministic_per_seed() {
        let (veh, fusion, _) = scene_grids(3);
        assert!(veh.len() >= 32);
        let a = sample_correspondences(&veh, &fusion, 16, 11).unwrap();
        let b = sample_correspondences(&veh, &fusion, 16, 11).unwrap();
        let c = sample_correspondences(&veh, &fusion, 16, 12).unwrap();
        assert_eq!(a, b);
        assert!(a.pairs.iter().zip(&c.pairs).any(|(x, y)| x != y));
    }

    #[test]
    fn empty_correspondence_is_an_error() {
        let params = VoxelParams::default();
        let a = voxelize(&PointCloud::new(vec![[0.1, 0.1, 0.1]], vec![0.0], 1).unwrap(), &params);
        let b = voxelize(&PointCloud::new(vec![[5.1, 0.1, 0.1]], vec![0.0], 1).unwrap(), &params);
        assert!(matches!(sample_correspondences(&a, &b, 8, 0), Err(Error::EmptyCorrespondence)));
        let empty = voxelize(&PointCloud::empty(1), &params);
        assert!(matches!(sample_correspondences(&empty, &b, 8, 0), Err(Error::EmptyCorrespondence)));
    }

    #[test]
    fn untouched_cells_have_identical_features() {
        let (veh, fusion, _) = scene_grids(5);
        // A fusion cell holds extra points iff its count exceeds the vehicle count.
        let mut untouched = 0;
        for (v, f) in matching_rows(&veh, &fusion) {
            if veh.counts()[v] == fusion.counts()[f] {
                untouched += 1;
                assert_eq!(veh.feature(v), fusion.feature(f));
                assert_eq!(veh.centroids()[v], fusion.centroids()[f]);
            }
        }
        assert!(untouched > 0);
    }

    #[test]
    fn neighborhood_includes_self_and_is_symmetric() {
        let (veh, _, _) = scene_grids(6);
        let nb = Neighborhood::build(&veh, 1);
        for r in 0..veh.len() {
            assert!(nb.of(r).contains(&(r as u32)));
            for (m, d) in nb.of(r).iter().zip(nb.directions_of(r)) {
                let back = nb.of(*m as usize).iter().position(|x| *x == r as u32).unwrap();
                let e = nb.directions_of(*m as usize)[back];
                assert_eq!([-d[0], -d[1], -d[2]], e);
                let (a, b) = (veh.indices()[r], veh.indices()[*m as usize]);
                assert!((0..3).all(|k| (a[k] - b[k]).abs() <= 1));
            }
        }
    }
}
