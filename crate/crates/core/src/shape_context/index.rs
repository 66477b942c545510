use std::f64::consts::{PI, TAU};

use super::{partition, sector_bin, Layout, ScConfig};

const LEAF_SIZE: usize = 8;
/// Angular clearance (radians) a box must keep from every sector boundary
/// before its points are counted in bulk.
const ANGLE_MARGIN: f64 = 1e-9;
/// Relative clearance from the shell radii.
const RADIUS_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// k-d tree over neighbor positions with per-node bounding boxes.
///
/// Counting descends only into nodes that straddle a shell radius or a sector
/// boundary as seen from the query; every other node lands in a single bin and
/// is counted in one step. Points in straddling leaves go through
/// [`partition`] one by one, so results equal the all-pairs computation.
#[derive(Debug, Clone)]
pub struct SectorTree {
    points: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

impl SectorTree {
    pub fn build(points: &[[f64; 3]]) -> Self {
        let mut tree = Self { points: points.to_vec(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { lo, hi, start, end, children: None });
        if end - start > LEAF_SIZE {
            let axis = (0..3).max_by(|a, b| (hi[*a] - lo[*a]).total_cmp(&(hi[*b] - lo[*b]))).unwrap();
            let mid = start + (end - start) / 2;
            self.points[start..end].select_nth_unstable_by(mid - start, |a, b| a[axis].total_cmp(&b[axis]));
            let left = self.build_node(start, mid);
            let right = self.build_node(mid, end);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    /// Adds the bin counts of all points relative to `query` into `counts`
    /// (length `cfg.n_bins()`).
    pub fn count_into(&self, query: &[f64; 3], cfg: &ScConfig, counts: &mut [u32]) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let lo: [f64; 3] = std::array::from_fn(|k| node.lo[k] - query[k]);
            let hi: [f64; 3] = std::array::from_fn(|k| node.hi[k] - query[k]);
            match classify(&lo, &hi, cfg) {
                Class::Masked => continue,
                Class::Bin(b) => {
                    counts[b] += (node.end - node.start) as u32;
                    continue;
                }
                Class::Mixed => {}
            }
            match node.children {
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
                None => {
                    for p in &self.points[node.start..node.end] {
                        if let Some(b) = partition(&[p[0] - query[0], p[1] - query[1], p[2] - query[2]], cfg) {
                            counts[b] += 1;
                        }
                    }
                }
            }
        }
    }
}

enum Class {
    Masked,
    Bin(usize),
    Mixed,
}

fn classify(lo: &[f64; 3], hi: &[f64; 3], cfg: &ScConfig) -> Class {
    let mut dmin2 = 0.0;
    let mut dmax2 = 0.0;
    for k in 0..3 {
        let near = if lo[k] > 0.0 {
            lo[k]
        } else if hi[k] < 0.0 {
            -hi[k]
        } else {
            0.0
        };
        let far = lo[k].abs().max(hi[k].abs());
        dmin2 += near * near;
        dmax2 += far * far;
    }
    let (dmin, dmax) = (dmin2.sqrt(), dmax2.sqrt());
    let eps = RADIUS_MARGIN * cfg.r2.max(1.0);
    if dmax < cfg.r1 - eps {
        return Class::Masked;
    }
    let shell = if dmin >= cfg.r2 + eps {
        1
    } else if dmin >= cfg.r1 + eps && dmax < cfg.r2 - eps {
        0
    } else {
        return Class::Mixed;
    };

    let xy_corners = [[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]];
    let Some(xy) = arc_bin(&xy_corners, TAU, cfg.nbins_xy) else {
        return Class::Mixed;
    };
    let sector = match cfg.layout {
        Layout::AzimuthElevation => {
            // (z, y) plane, angle atan2(y, z) folded onto a half turn.
            let zy_corners = [[lo[2], lo[1]], [lo[2], hi[1]], [hi[2], lo[1]], [hi[2], hi[1]]];
            let Some(zy) = arc_bin(&zy_corners, PI, cfg.nbins_zy) else {
                return Class::Mixed;
            };
            xy * cfg.nbins_zy + zy
        }
        Layout::Planar => xy,
    };
    Class::Bin(shell * cfg.sectors() + sector)
}

/// Sector shared by every direction from the origin into the rectangle with
/// the given corners (`[u, v]`, angle `atan2(v, u)` taken modulo `period`),
/// or `None` if the rectangle touches the origin or comes within
/// [`ANGLE_MARGIN`] of a sector boundary.
fn arc_bin(corners: &[[f64; 2]; 4], period: f64, n: usize) -> Option<usize> {
    let (ulo, uhi) = (corners[0][0], corners[3][0]);
    let (vlo, vhi) = (corners[0][1], corners[3][1]);
    let m = 1e-12 * (uhi.abs() + ulo.abs() + vhi.abs() + vlo.abs()).max(1e-300);
    if ulo <= m && uhi >= -m && vlo <= m && vhi >= -m {
        return None;
    }
    // The rectangle misses the origin, so it subtends less than half a turn
    // and its directions form one arc bounded by two corners.
    let base = corners[0][1].atan2(corners[0][0]);
    let (mut dlo, mut dhi) = (0.0f64, 0.0f64);
    for c in &corners[1..] {
        let mut d = c[1].atan2(c[0]) - base;
        if d > PI {
            d -= TAU;
        } else if d <= -PI {
            d += TAU;
        }
        dlo = dlo.min(d);
        dhi = dhi.max(d);
    }
    let start = (base + dlo).rem_euclid(period);
    let end = start + (dhi - dlo);
    let (a, b) = (start - ANGLE_MARGIN, end + ANGLE_MARGIN);
    if a < 0.0 || b >= period {
        return None;
    }
    let width = period / n as f64;
    let bin = sector_bin(a, width, n);
    (bin == sector_bin(b, width, n) && (b / width).floor() < n as f64).then_some(bin)
}
