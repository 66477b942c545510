//! Run configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{Ablation, Co2Config, CspConfig, DenominatorMode, LossConfig};
use crate::nn::EncoderConfig;
use crate::shape_context::{Layout, ScConfig};
use crate::synth::SceneSpec;
use crate::voxel::VoxelParams;

/// Everything that determines a pretraining run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub loss: LossConfig,
    /// Contrastive pairs sampled per scene.
    pub n1: usize,
    pub encoder: EncoderConfig,
    /// Output width of the projection head.
    pub d1: usize,
    pub projection_hidden: usize,
    pub shape_hidden: usize,
    pub shape_context: ScConfig,
    pub sf_csp: f64,
    /// Points with `z < z_thd` (vehicle frame) are treated as ground.
    pub z_thd: f64,
    pub voxel: VoxelParams,
    pub steps: usize,
    pub batch_scenes: usize,
    pub scenes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Template for generated scenes; its seed is replaced per scene.
    pub scene: SceneSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig {
                co2: Co2Config { tau: 0.07, mode: DenominatorMode::AnchorNegatives, bidirectional: false },
                csp: CspConfig { n_bin: 32, n2: 2048, w_csp: 10.0 },
                ablation: Ablation::Both,
            },
            n1: 2048,
            encoder: EncoderConfig::default(),
            d1: 256,
            projection_hidden: 256,
            shape_hidden: 128,
            shape_context: ScConfig::standard(),
            sf_csp: 4.0,
            z_thd: -1.6,
            voxel: VoxelParams::default(),
            steps: 500,
            batch_scenes: 4,
            scenes: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            scene: SceneSpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_vec3(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value.split([',', ' ']).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect::<Result<_>>()?;
    match parts[..] {
        [v] => Ok([v; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err(Error::Config(format!("{key}: expected 1 or 3 numbers, got {value:?}"))),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

pub fn ablation_name(a: Ablation) -> &'static str {
    match a {
        Ablation::Both => "both",
        Ablation::Co2Only => "co2-only",
        Ablation::CspOnly => "csp-only",
    }
}

pub fn parse_ablation(s: &str) -> Result<Ablation> {
    match s {
        "both" => Ok(Ablation::Both),
        "co2-only" => Ok(Ablation::Co2Only),
        "csp-only" => Ok(Ablation::CspOnly),
        _ => Err(Error::Config(format!("ablation: expected both, co2-only or csp-only, got {s:?}"))),
    }
}

fn mode_name(m: DenominatorMode) -> &'static str {
    match m {
        DenominatorMode::AnchorNegatives => "anchor-negatives",
        DenominatorMode::DiagonalLiteral => "diagonal-literal",
    }
}

fn layout_name(l: Layout) -> &'static str {
    match l {
        Layout::AzimuthElevation => "azimuth-elevation",
        Layout::Planar => "planar",
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_scenes < 1 || self.scenes < self.batch_scenes {
            return bad(format!("need 1 <= batch_scenes <= scenes, got {} and {}", self.batch_scenes, self.scenes));
        }
        if !(self.loss.co2.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.loss.co2.tau));
        }
        if self.n1 < 2 {
            return bad(format!("n1 must be at least 2, got {}", self.n1));
        }
        if self.loss.csp.n2 < 1 || !(self.loss.csp.w_csp >= 0.0) {
            return bad("n2 must be positive and w_csp non-negative".into());
        }
        if [self.d1, self.projection_hidden, self.shape_hidden, self.encoder.hidden, self.encoder.d_enc].contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.encoder.pool_radii.iter().any(|r| *r < 1) {
            return bad("pool radii must be at least 1".into());
        }
        self.shape_context.validate()?;
        if self.shape_context.n_bins() != self.loss.csp.n_bin {
            return bad(format!(
                "n_bin = {} but the shape-context layout has {} bins",
                self.loss.csp.n_bin,
                self.shape_context.n_bins()
            ));
        }
        self.voxel.validate()?;
        self.scene.validate()
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at(path))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tau" => self.loss.co2.tau = parse(key, value)?,
            "denominator" => {
                self.loss.co2.mode = match value {
                    "anchor-negatives" => DenominatorMode::AnchorNegatives,
                    "diagonal-literal" => DenominatorMode::DiagonalLiteral,
                    _ => return Err(Error::Config(format!("denominator: unknown mode {value:?}"))),
                }
            }
            "bidirectional" => self.loss.co2.bidirectional = parse_bool(key, value)?,
            "n1" => self.n1 = parse(key, value)?,
            "n2" => self.loss.csp.n2 = parse(key, value)?,
            "n_bin" => self.loss.csp.n_bin = parse(key, value)?,
            "w_csp" => self.loss.csp.w_csp = parse(key, value)?,
            "sf_csp" => self.sf_csp = parse(key, value)?,
            "ablation" => self.loss.ablation = parse_ablation(value)?,
            "d_enc" => self.encoder.d_enc = parse(key, value)?,
            "encoder_hidden" => self.encoder.hidden = parse(key, value)?,
            "pool_radii" => {
                self.encoder.pool_radii = if value == "none" {
                    Vec::new()
                } else {
                    value.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?
                }
            }
            "d1" => self.d1 = parse(key, value)?,
            "projection_hidden" => self.projection_hidden = parse(key, value)?,
            "shape_hidden" => self.shape_hidden = parse(key, value)?,
            "r1" => self.shape_context.r1 = parse(key, value)?,
            "r2" => self.shape_context.r2 = parse(key, value)?,
            "nbins_xy" => self.shape_context.nbins_xy = parse(key, value)?,
            "nbins_zy" => self.shape_context.nbins_zy = parse(key, value)?,
            "sc_layout" => {
                self.shape_context.layout = match value {
                    "azimuth-elevation" => Layout::AzimuthElevation,
                    "planar" => Layout::Planar,
                    _ => return Err(Error::Config(format!("sc_layout: unknown layout {value:?}"))),
                }
            }
            "z_thd" => self.z_thd = parse(key, value)?,
            "voxel_size" => self.voxel.voxel_size = parse_vec3(key, value)?,
            "range_min" => self.voxel.range_min = parse_vec3(key, value)?,
            "range_max" => self.voxel.range_max = parse_vec3(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch_scenes" => self.batch_scenes = parse(key, value)?,
            "scenes" => self.scenes = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "scene_extent" => self.scene.extent = parse(key, value)?,
            "scene_objects" => self.scene.n_objects = parse(key, value)?,
            "noise_sigma" => self.scene.noise_sigma = parse(key, value)?,
            "ground_density" => self.scene.ground_density = parse(key, value)?,
            "surface_density" => self.scene.surface_density = parse(key, value)?,
            "pedestrian_fraction" => self.scene.pedestrian_fraction = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Text form accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let v3 = |v: [f64; 3]| format!("{},{},{}", v[0], v[1], v[2]);
        let radii = if self.encoder.pool_radii.is_empty() {
            "none".to_string()
        } else {
            self.encoder.pool_radii.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("tau", self.loss.co2.tau.to_string());
        kv("denominator", mode_name(self.loss.co2.mode).into());
        kv("bidirectional", self.loss.co2.bidirectional.to_string());
        kv("n1", self.n1.to_string());
        kv("n2", self.loss.csp.n2.to_string());
        kv("n_bin", self.loss.csp.n_bin.to_string());
        kv("w_csp", self.loss.csp.w_csp.to_string());
        kv("sf_csp", self.sf_csp.to_string());
        kv("ablation", ablation_name(self.loss.ablation).into());
        kv("d_enc", self.encoder.d_enc.to_string());
        kv("encoder_hidden", self.encoder.hidden.to_string());
        kv("pool_radii", radii);
        kv("d1", self.d1.to_string());
        kv("projection_hidden", self.projection_hidden.to_string());
        kv("shape_hidden", self.shape_hidden.to_string());
        kv("r1", self.shape_context.r1.to_string());
        kv("r2", self.shape_context.r2.to_string());
        kv("nbins_xy", self.shape_context.nbins_xy.to_string());
        kv("nbins_zy", self.shape_context.nbins_zy.to_string());
        kv("sc_layout", layout_name(self.shape_context.layout).into());
        kv("z_thd", self.z_thd.to_string());
        kv("voxel_size", v3(self.voxel.voxel_size));
        kv("range_min", v3(self.voxel.range_min));
        kv("range_max", v3(self.voxel.range_max));
        kv("steps", self.steps.to_string());
        kv("batch_scenes", self.batch_scenes.to_string());
        kv("scenes", self.scenes.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("momentum", self.momentum.to_string());
        kv("seed", self.seed.to_string());
        kv("scene_extent", self.scene.extent.to_string());
        kv("scene_objects", self.scene.n_objects.to_string());
        kv("noise_sigma", self.scene.noise_sigma.to_string());
        kv("ground_density", self.scene.ground_density.to_string());
        kv("surface_density", self.scene.surface_density.to_string());
        kv("pedestrian_fraction", self.scene.pedestrian_fraction.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.loss.co2.tau, 0.07);
        assert_eq!((c.encoder.d_enc, c.d1, c.n1, c.loss.csp.n2, c.loss.csp.n_bin), (64, 256, 2048, 2048, 32));
        assert_eq!((c.sf_csp, c.loss.csp.w_csp), (4.0, 10.0));
        assert_eq!((c.learning_rate, c.momentum, c.batch_scenes), (0.01, 0.9, 4));
        c.validate().unwrap();
    }

    #[test]
    fn parse_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 17;
        c.loss.ablation = Ablation::CspOnly;
        c.voxel.voxel_size = [0.5, 0.5, 0.25];
        c.encoder.pool_radii = vec![];
        c.loss.co2.bidirectional = true;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_errors() {
        let c = RunConfig::parse("# header\nsteps = 3   # trailing\n\nablation = co2-only\n").unwrap();
        assert_eq!(c.steps, 3);
        assert_eq!(c.loss.ablation, Ablation::Co2Only);
        assert!(matches!(RunConfig::parse("stpes = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("steps = 0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("learning_rate = -1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("steps 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("n_bin = 16"), Err(Error::Config(_))));
        assert!(RunConfig::parse("sc_layout = planar\nnbins_xy = 16\nnbins_zy = 1").is_ok());
    }
}
