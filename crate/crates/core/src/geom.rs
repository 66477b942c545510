//! Point clouds, rigid transforms, fusion and ground filtering.

use crate::error::{Error, Result};

/// A set of points with per-point feature channels (intensity by default).
///
/// Positions are stored as `[x, y, z]` rows, features row-major with
/// `feature_width` channels per point. `source_ids` record which synthetic
/// world point produced each row, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    features: Vec<f64>,
    feature_width: usize,
    source_ids: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>, features: Vec<f64>, feature_width: usize) -> Result<Self> {
        if features.len() != positions.len() * feature_width {
            return Err(Error::Shape(format!(
                "{} points need {} feature values, got {}",
                positions.len(),
                positions.len() * feature_width,
                features.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidGeometry(format!("non-finite coordinate at row {i}")));
        }
        Ok(Self { positions, features, feature_width, source_ids: None })
    }

    pub fn empty(feature_width: usize) -> Self {
        Self { positions: Vec::new(), features: Vec::new(), feature_width, source_ids: None }
    }

    pub fn with_source_ids(mut self, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != self.positions.len() {
            return Err(Error::Shape(format!(
                "{} source ids for {} points",
                ids.len(),
                self.positions.len()
            )));
        }
        self.source_ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
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

    pub fn source_ids(&self) -> Option<&[u32]> {
        self.source_ids.as_deref()
    }

    /// Keeps the rows for which `keep` is true, preserving order.
    pub fn select(&self, keep: &[bool]) -> PointCloud {
        debug_assert_eq!(keep.len(), self.len());
        let d = self.feature_width;
        let mut positions = Vec::new();
        let mut features = Vec::new();
        let mut ids = self.source_ids.as_ref().map(|_| Vec::new());
        for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            positions.push(self.positions[i]);
            features.extend_from_slice(&self.features[i * d..(i + 1) * d]);
            if let (Some(out), Some(src)) = (ids.as_mut(), self.source_ids.as_ref()) {
                out.push(src[i]);
            }
        }
        PointCloud { positions, features, feature_width: d, source_ids: ids }
    }
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

const ORTHO_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        if rotation.iter().flatten().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite transform entry".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHO_TOL {
                    return Err(Error::InvalidGeometry(format!(
                        "rotation is not orthonormal: (R^T R)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        let det = det3(&rotation);
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidGeometry(format!("rotation determinant {det} != 1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self { translation: t, ..Self::identity() }
    }

    /// Rotation about +z by `yaw` radians followed by translation.
    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Self { rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], translation }
    }

    /// Rodrigues rotation about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, translation: [f64; 3]) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidGeometry("rotation axis must be non-zero".into()));
        }
        let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = angle.sin_cos();
        let v = 1.0 - c;
        let rotation = [
            [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
            [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
            [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
        ];
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64; 3] {
        &self.translation
    }

    #[inline]
    pub fn apply_point(&self, p: &[f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        let rt = self.apply_point(&other.translation);
        RigidTransform { rotation, translation: rt }
    }

    pub fn invert(&self) -> RigidTransform {
        let r = &self.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[j][i];
            }
        }
        let t = &self.translation;
        let translation = [
            -(rotation[0][0] * t[0] + rotation[0][1] * t[1] + rotation[0][2] * t[2]),
            -(rotation[1][0] * t[0] + rotation[1][1] * t[1] + rotation[1][2] * t[2]),
            -(rotation[2][0] * t[0] + rotation[2][1] * t[1] + rotation[2][2] * t[2]),
        ];
        RigidTransform { rotation, translation }
    }

    /// Largest absolute entry-wise deviation from another transform.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        self.rotation
            .iter()
            .flatten()
            .zip(other.rotation.iter().flatten())
            .chain(self.translation.iter().zip(other.translation.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> Result<PointCloud> {
    let mut positions = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.positions.iter().enumerate() {
        let q = t.apply_point(p);
        if q.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidGeometry(format!("transformed row {i} is not finite")));
        }
        positions.push(q);
    }
    Ok(PointCloud {
        positions,
        features: cloud.features.clone(),
        feature_width: cloud.feature_width,
        source_ids: cloud.source_ids.clone(),
    })
}

/// Vehicle rows first, verbatim, followed by the infrastructure rows moved
/// into the vehicle frame.
pub fn fuse(veh: &PointCloud, inf: &PointCloud, t_veh_inf: &RigidTransform) -> Result<PointCloud> {
    if veh.feature_width != inf.feature_width {
        return Err(Error::FeatureWidthMismatch { left: veh.feature_width, right: inf.feature_width });
    }
    let moved = apply_transform(inf, t_veh_inf)?;
    let mut positions = veh.positions.clone();
    positions.extend_from_slice(&moved.positions);
    let mut features = veh.features.clone();
    features.extend_from_slice(&moved.features);
    let source_ids = match (&veh.source_ids, &moved.source_ids) {
        (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).copied().collect()),
        _ => None,
    };
    Ok(PointCloud { positions, features, feature_width: veh.feature_width, source_ids })
}

/// Drops points with `z < z_thd`; points exactly at the threshold are kept.
pub fn filter_ground(cloud: &PointCloud, z_thd: f64) -> (PointCloud, Vec<bool>) {
    let mask: Vec<bool> = cloud.positions.iter().map(|p| p[2] >= z_thd).collect();
    (cloud.select(&mask), mask)
}
