//! WebAssembly bindings behind `www/index.html`.

use wasm_bindgen::prelude::*;

use co3::geom::{filter_ground, fuse, PointCloud};
use co3::shape_context::{finalize_distribution, raw_histograms, ScConfig};
use co3::synth::{generate_scene, SceneSpec, ScenePair};
use co3::voxel::{matching_rows, voxelize, VoxelParams};

fn js(e: co3::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One generated scene pair held on the Rust side.
#[wasm_bindgen]
pub struct Scene {
    pair: ScenePair,
    fusion: PointCloud,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, objects: usize) -> Result<Scene, JsError> {
        let spec = SceneSpec { seed, n_objects: objects, ..SceneSpec::default() };
        let pair = generate_scene(&spec).map_err(js)?;
        let fusion = fuse(&pair.veh, &pair.inf, &pair.t_veh_inf).map_err(js)?;
        Ok(Scene { pair, fusion })
    }

    /// Vehicle-view points as `x, y, z, class` quadruples.
    pub fn vehicle_points(&self) -> Vec<f32> {
        let ids = self.pair.veh.source_ids().unwrap_or(&[]);
        self.pair
            .veh
            .positions()
            .iter()
            .zip(ids)
            .flat_map(|(p, id)| [p[0] as f32, p[1] as f32, p[2] as f32, self.pair.labels[*id as usize] as u8 as f32])
            .collect()
    }

    /// Infrastructure points moved into the vehicle frame, as `x, y, z`
    /// triples.
    pub fn infrastructure_points(&self) -> Vec<f32> {
        self.fusion.positions()[self.pair.veh.len()..].iter().flat_map(|p| [p[0] as f32, p[1] as f32, p[2] as f32]).collect()
    }

    /// `[kept vehicle points, vehicle voxels, fusion voxels, shared voxels]`
    /// after dropping points below `z_thd`.
    pub fn ground_filter(&self, z_thd: f64) -> Vec<u32> {
        let params = VoxelParams::default();
        let (veh, _) = filter_ground(&self.pair.veh, z_thd);
        let (fusion, _) = filter_ground(&self.fusion, z_thd);
        let gv = voxelize(&veh, &params);
        let gf = voxelize(&fusion, &params);
        [veh.len(), gv.len(), gf.len(), matching_rows(&gv, &gf).len()].map(|v| v as u32).to_vec()
    }

    /// Finalized shape context of the vehicle point nearest to `(x, y)` in the
    /// ground plane, among all vehicle points. The first three entries are the
    /// chosen point; the 32 bins follow.
    pub fn shape_context(&self, x: f64, y: f64, sf_csp: f64) -> Vec<f64> {
        let pts = self.pair.veh.positions();
        let Some(q) = pts.iter().min_by(|a, b| {
            let da = (a[0] - x).powi(2) + (a[1] - y).powi(2);
            let db = (b[0] - x).powi(2) + (b[1] - y).powi(2);
            da.total_cmp(&db)
        }) else {
            return Vec::new();
        };
        let raw = raw_histograms(&[*q], pts, &ScConfig::standard());
        let mut out = q.to_vec();
        out.extend_from_slice(finalize_distribution(&raw, sf_csp).row(0));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_views_and_filter() {
        let s = Scene::new(4, 5).unwrap();
        let veh = s.vehicle_points();
        assert_eq!(veh.len() % 4, 0);
        assert!(veh.chunks(4).all(|p| p[3] <= 2.0));
        assert_eq!(s.infrastructure_points().len(), 3 * s.pair.inf.len());
        let [kept, gv, gf, shared] = s.ground_filter(-1.6)[..] else { panic!() };
        assert!(kept > 0 && gv > 0 && gf >= gv && shared <= gv);
        let sc = s.shape_context(0.0, 0.0, 4.0);
        assert_eq!(sc.len(), 3 + 32);
        assert!((sc[3..].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
