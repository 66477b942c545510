//! Deterministic two-sensor synthetic scenes.
//!
//! A world point set (flat ground at z = 0 plus car-sized boxes and
//! pedestrian-sized cylinders) is sampled once; a vehicle sensor and a raised
//! roadside sensor each observe an angular sector of it with independent
//! subsampling and noise. Every captured point keeps the index of the world
//! point it came from.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointClass {
    Ground = 0,
    Vehicle = 1,
    Pedestrian = 2,
}

impl PointClass {
    pub const ALL: [PointClass; 3] = [PointClass::Ground, PointClass::Vehicle, PointClass::Pedestrian];

    pub fn name(self) -> &'static str {
        match self {
            PointClass::Ground => "ground",
            PointClass::Vehicle => "vehicle",
            PointClass::Pedestrian => "pedestrian",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Where a sensor sits and what it sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    /// Sensor-to-world pose.
    pub pose: RigidTransform,
    pub keep_prob: f64,
    /// Field of view about the sensor's +x axis, radians.
    pub sector: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Half side length of the square world area, meters.
    pub extent: f64,
    pub n_objects: usize,
    /// Fraction of objects that are pedestrians rather than cars.
    pub pedestrian_fraction: f64,
    /// Per-view position noise scale, meters (see [`capture_view`]).
    pub noise_sigma: f64,
    /// Ground samples per square meter.
    pub ground_density: f64,
    /// Object surface samples per square meter.
    pub surface_density: f64,
    pub vehicle: SensorSpec,
    pub infrastructure: SensorSpec,
    pub seed: u64,
}

pub const VEHICLE_SENSOR_HEIGHT: f64 = 2.0;
pub const INFRA_SENSOR_HEIGHT: f64 = 4.0;
pub const INFRA_OFFSET: f64 = 20.0;
/// Lowest object surface point above the ground plane.
pub const OBJECT_CLEARANCE: f64 = 0.15;

impl Default for SceneSpec {
    fn default() -> Self {
        let sector = 1.5 * PI;
        Self {
            extent: 12.0,
            n_objects: 8,
            pedestrian_fraction: 0.4,
            noise_sigma: 0.02,
            ground_density: 1.5,
            surface_density: 10.0,
            vehicle: SensorSpec {
                pose: RigidTransform::from_translation([-INFRA_OFFSET / 2.0, 0.0, VEHICLE_SENSOR_HEIGHT]),
                keep_prob: 0.6,
                sector,
            },
            infrastructure: SensorSpec {
                pose: RigidTransform::from_yaw(PI / 2.0, [INFRA_OFFSET / 2.0, 0.0, INFRA_SENSOR_HEIGHT]),
                keep_prob: 0.6,
                sector,
            },
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0) {
            return Err(Error::Config("scene extent must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        for s in [&self.vehicle, &self.infrastructure] {
            if !(s.keep_prob > 0.0 && s.keep_prob <= 1.0) {
                return Err(Error::Config(format!("keep_prob must be in (0, 1], got {}", s.keep_prob)));
            }
        }
        Ok(())
    }
}

/// World-frame points with per-point class.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<PointClass>,
}

/// Two captures of one world plus the transform taking infrastructure-frame
/// coordinates into the vehicle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub veh: PointCloud,
    pub inf: PointCloud,
    pub t_veh_inf: RigidTransform,
    /// Class of every world point, indexed by source id.
    pub labels: Vec<PointClass>,
}

impl ScenePair {
    pub fn class_of(&self, source_id: u32) -> PointClass {
        self.labels[source_id as usize]
    }
}

fn sample_box(rng: &mut ChaCha8Rng, density: f64, out: &mut Vec<[f64; 3]>) {
    let length = rng.random_range(3.8..4.6);
    let width = rng.random_range(1.7..1.9);
    let height = rng.random_range(1.4..1.7);
    let yaw = rng.random_range(0.0..TAU);
    let (hl, hw) = (length / 2.0, width / 2.0);
    let z0 = OBJECT_CLEARANCE;
    // Top and four sides; the underside is not visible from any sensor.
    let faces = [
        (length * width, 0),
        (length * height, 1),
        (length * height, 2),
        (width * height, 3),
        (width * height, 4),
    ];
    let (s, c) = yaw.sin_cos();
    for (area, face) in faces {
        let n = (area * density).round() as usize;
        for _ in 0..n {
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            let local = match face {
                0 => [(u - 0.5) * length, (v - 0.5) * width, z0 + height],
                1 => [(u - 0.5) * length, hw, z0 + v * height],
                2 => [(u - 0.5) * length, -hw, z0 + v * height],
                3 => [hl, (u - 0.5) * width, z0 + v * height],
                _ => [-hl, (u - 0.5) * width, z0 + v * height],
            };
            out.push([c * local[0] - s * local[1], s * local[0] + c * local[1], local[2]]);
        }
    }
}

fn sample_cylinder(rng: &mut ChaCha8Rng, density: f64, out: &mut Vec<[f64; 3]>) {
    let radius = rng.random_range(0.25..0.35);
    let height = rng.random_range(1.6..1.9);
    let z0 = OBJECT_CLEARANCE;
    let side = (TAU * radius * height * density).round() as usize;
    for _ in 0..side {
        let a = rng.random_range(0.0..TAU);
        out.push([radius * a.cos(), radius * a.sin(), z0 + rng.random::<f64>() * height]);
    }
    let top = (PI * radius * radius * density).round() as usize;
    for _ in 0..top {
        let a = rng.random_range(0.0..TAU);
        let r = radius * rng.random::<f64>().sqrt();
        out.push([r * a.cos(), r * a.sin(), z0 + height]);
    }
}

/// Ground plus `n_objects` non-overlapping objects.
pub fn generate_world(spec: &SceneSpec) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_3c3e);
    let e = spec.extent;
    let n_ground = (4.0 * e * e * spec.ground_density).round() as usize;
    let mut points: Vec<[f64; 3]> =
        (0..n_ground).map(|_| [rng.random_range(-e..e), rng.random_range(-e..e), 0.0]).collect();
    let mut labels = vec![PointClass::Ground; n_ground];

    let margin = 3.0f64.min(e / 2.0);
    let mut centers: Vec<([f64; 2], f64)> = Vec::new();
    let mut attempts = 0;
    while centers.len() < spec.n_objects && attempts < 200 * spec.n_objects.max(1) {
        attempts += 1;
        let ped = rng.random::<f64>() < spec.pedestrian_fraction;
        let footprint = if ped { 0.5 } else { 2.6 };
        let c = [rng.random_range(-e + margin..e - margin), rng.random_range(-e + margin..e - margin)];
        if centers.iter().any(|(o, r)| ((o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2)).sqrt() < r + footprint + 0.5) {
            continue;
        }
        centers.push((c, footprint));
        let mut local = Vec::new();
        if ped {
            sample_cylinder(&mut rng, spec.surface_density, &mut local);
        } else {
            sample_box(&mut rng, spec.surface_density, &mut local);
        }
        let class = if ped { PointClass::Pedestrian } else { PointClass::Vehicle };
        labels.extend(std::iter::repeat(class).take(local.len()));
        points.extend(local.into_iter().map(|p| [p[0] + c[0], p[1] + c[1], p[2]]));
    }
    World { points, labels }
}

fn noise_vector(rng: &mut ChaCha8Rng, sigma: f64) -> [f64; 3] {
    if sigma == 0.0 {
        return [0.0; 3];
    }
    // Isotropic Gaussian with E‖n‖² = σ², redrawn until ‖n‖ ≤ 1.5σ so two
    // captures of one surface point stay within 3σ of each other.
    let normal = Normal::new(0.0, sigma / 3f64.sqrt()).unwrap();
    loop {
        let n = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
        if (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() <= 1.5 * sigma {
            return n;
        }
    }
}

/// Intensity model: falls off with range.
pub fn intensity(range: f64) -> f64 {
    1.0 / (1.0 + range / 20.0)
}

/// Observes `world` from a sensor at `pose` (sensor to world). Points within
/// `sector / 2` of the sensor's +x axis survive a `keep_prob` coin flip, are
/// expressed in the sensor frame, and are perturbed by bounded noise of scale
/// `sigma`.
pub fn capture_view(world: &[[f64; 3]], pose: &RigidTransform, keep_prob: f64, sector: f64, sigma: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_sensor = pose.invert();
    let half = sector / 2.0;
    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut ids = Vec::new();
    for (id, p) in world.iter().enumerate() {
        let s = to_sensor.apply_point(p);
        let azimuth = s[1].atan2(s[0]);
        // Always draw, so one point's outcome does not depend on its neighbors'.
        let coin = rng.random::<f64>();
        let noise = noise_vector(&mut rng, sigma);
        if azimuth.abs() > half || coin >= keep_prob {
            continue;
        }
        let q = [s[0] + noise[0], s[1] + noise[1], s[2] + noise[2]];
        let range = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        positions.push(q);
        features.push(intensity(range));
        ids.push(id as u32);
    }
    PointCloud::new(positions, features, 1).unwrap().with_source_ids(ids).unwrap()
}

pub fn generate_scene(spec: &SceneSpec) -> Result<ScenePair> {
    spec.validate()?;
    let world = generate_world(spec);
    let v = &spec.vehicle;
    let i = &spec.infrastructure;
    let veh = capture_view(&world.points, &v.pose, v.keep_prob, v.sector, spec.noise_sigma, spec.seed.wrapping_mul(2).wrapping_add(1));
    let inf = capture_view(&world.points, &i.pose, i.keep_prob, i.sector, spec.noise_sigma, spec.seed.wrapping_mul(2).wrapping_add(2));
    let t_veh_inf = v.pose.invert().compose(&i.pose);
    Ok(ScenePair { veh, inf, t_veh_inf, labels: world.labels })
}

/// Fraction of the smaller view's source ids that the other view also holds.
pub fn shared_fraction(a: &PointCloud, b: &PointCloud) -> f64 {
    let (Some(ia), Some(ib)) = (a.source_ids(), b.source_ids()) else {
        return 0.0;
    };
    let set: std::collections::HashSet<u32> = ib.iter().copied().collect();
    let shared = ia.iter().filter(|id| set.contains(id)).count();
    shared as f64 / ia.len().min(ib.len()).max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_transform, filter_ground, fuse};
    use std::collections::HashMap;

    #[test]
    fn empty_scene_is_pure_ground() {
        let spec = SceneSpec { n_objects: 0, noise_sigma: 0.0, ..SceneSpec::with_seed(3) };
        let pair = generate_scene(&spec).unwrap();
        assert!(pair.labels.iter().all(|l| *l == PointClass::Ground));
        assert!(!pair.veh.is_empty() && !pair.inf.is_empty());
        let ground_z = -VEHICLE_SENSOR_HEIGHT;
        assert!(filter_ground(&pair.veh, ground_z + 0.01).0.is_empty());
        let fused = fuse(&pair.veh, &pair.inf, &pair.t_veh_inf).unwrap();
        assert!(filter_ground(&fused, ground_z + 0.01).0.is_empty());
        assert!(filter_ground(&pair.inf, -INFRA_SENSOR_HEIGHT + 0.01).0.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_scene(&SceneSpec::with_seed(11)).unwrap();
        let b = generate_scene(&SceneSpec::with_seed(11)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneSpec::with_seed(12)).unwrap();
        assert_ne!(a.veh, c.veh);
    }

    #[test]
    fn shared_points_agree_after_transform() {
        for seed in 0..5 {
            let spec = SceneSpec::with_seed(seed);
            let pair = generate_scene(&spec).unwrap();
            let moved = apply_transform(&pair.inf, &pair.t_veh_inf).unwrap();
            let veh_at: HashMap<u32, usize> =
                pair.veh.source_ids().unwrap().iter().enumerate().map(|(i, id)| (*id, i)).collect();
            let mut shared = 0;
            for (j, id) in moved.source_ids().unwrap().iter().enumerate() {
                if let Some(i) = veh_at.get(id) {
                    shared += 1;
                    let (p, q) = (pair.veh.positions()[*i], moved.positions()[j]);
                    let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                    assert!(d <= 3.0 * spec.noise_sigma + 1e-12, "{d}");
                }
            }
            assert!(shared > 0);
        }
    }

    #[test]
    fn capture_edge_cases() {
        let world: Vec<[f64; 3]> = (0..50).map(|i| [i as f64 * 0.3 - 7.0, (i % 7) as f64 - 3.0, 0.5]).collect();
        let all = capture_view(&world, &RigidTransform::identity(), 1.0, TAU + 0.1, 0.0, 1);
        assert_eq!(all.positions(), world.as_slice());
        assert_eq!(all.source_ids().unwrap(), (0..50).collect::<Vec<u32>>().as_slice());
        let none = capture_view(&world, &RigidTransform::identity(), 0.0, TAU + 0.1, 0.0, 1);
        assert!(none.is_empty());
    }

    #[test]
    fn views_overlap_but_differ() {
        let mut fractions = Vec::new();
        for seed in 0..20 {
            let pair = generate_scene(&SceneSpec::with_seed(seed)).unwrap();
            fractions.push(shared_fraction(&pair.veh, &pair.inf));
            let a: std::collections::HashSet<u32> = pair.veh.source_ids().unwrap().iter().copied().collect();
            let b: std::collections::HashSet<u32> = pair.inf.source_ids().unwrap().iter().copied().collect();
            assert!(a.symmetric_difference(&b).next().is_some());
        }
        assert!(fractions.iter().all(|f| *f >= 0.3), "{fractions:?}");
    }

    #[test]
    fn objects_clear_the_ground() {
        let world = generate_world(&SceneSpec::with_seed(4));
        let ground_max =
            world.points.iter().zip(&world.labels).filter(|(_, l)| **l == PointClass::Ground).map(|(p, _)| p[2]).fold(f64::MIN, f64::max);
        for (p, l) in world.points.iter().zip(&world.labels) {
            if *l != PointClass::Ground {
                assert!(p[2] > ground_max + 0.1);
            }
        }
        assert!(world.labels.contains(&PointClass::Vehicle));
        assert!(world.labels.contains(&PointClass::Pedestrian));
    }
}
