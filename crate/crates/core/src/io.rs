//! Point cloud file formats.
//!
//! Text: one point per line, `x y z f_1 .. f_d` (d = 1 is intensity), `#` starts
//! a comment line.
//!
//! Binary (`.co3p`): magic `CO3P`, u32 version, u32 point count, u32 feature
//! width, then `N * (3 + d)` little-endian f32 values, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

pub const CLOUD_MAGIC: &[u8; 4] = b"CO3P";
pub const CLOUD_VERSION: u32 = 1;

pub fn parse_text_cloud(text: &str) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad number {tok:?}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 3 {
            return Err(Error::Format(format!("line {}: expected at least x y z", lineno + 1)));
        }
        let d = values.len() - 3;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(Error::Format(format!(
                    "line {}: {} feature columns, earlier rows had {w}",
                    lineno + 1,
                    d
                )))
            }
            _ => {}
        }
        positions.push([values[0], values[1], values[2]]);
        features.extend_from_slice(&values[3..]);
    }
    PointCloud::new(positions, features, width.unwrap_or(1))
}

pub fn format_text_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 40);
    for (i, p) in cloud.positions().iter().enumerate() {
        out.push_str(&format!("{} {} {}", p[0], p[1], p[2]));
        for f in cloud.feature(i) {
            out.push_str(&format!(" {f}"));
        }
        out.push('\n');
    }
    out
}

pub fn encode_binary_cloud(cloud: &PointCloud) -> Vec<u8> {
    let d = cloud.feature_width();
    let mut buf = Vec::with_capacity(16 + cloud.len() * (3 + d) * 4);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for (i, p) in cloud.positions().iter().enumerate() {
        for v in p.iter().chain(cloud.feature(i)) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn decode_binary_cloud(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 16 {
        return Err(Error::Format("binary cloud shorter than its header".into()));
    }
    if &bytes[..4] != CLOUD_MAGIC {
        return Err(Error::Format("bad magic, expected CO3P".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != CLOUD_VERSION {
        return Err(Error::Version { found: version, expected: CLOUD_VERSION });
    }
    let n = word(8) as usize;
    let d = word(12) as usize;
    let stride = 3 + d;
    let expected = n
        .checked_mul(stride)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| Error::Format("point count overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!("expected {expected} bytes for {n} points, found {}", bytes.len())));
    }
    let mut positions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * d);
    for row in bytes[16..].chunks_exact(stride * 4) {
        let vals: Vec<f64> =
            row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        positions.push([vals[0], vals[1], vals[2]]);
        features.extend_from_slice(&vals[3..]);
    }
    PointCloud::new(positions, features, d)
}

/// Reads either format, choosing by magic bytes.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(Error::at(path))?;
    if bytes.starts_with(CLOUD_MAGIC) {
        decode_binary_cloud(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))?;
        parse_text_cloud(&text)
    }
}

pub fn write_binary_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut f = fs::File::create(path).map_err(Error::at(path))?;
    f.write_all(&encode_binary_cloud(cloud)).map_err(Error::at(path))
}
