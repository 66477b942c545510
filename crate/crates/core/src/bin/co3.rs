use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use co3::io::read_cloud;
use co3::pipeline::data::{generate_scenes, read_scene_set, write_scene_set};
use co3::pipeline::gradcheck::{grad_check_config, run_grad_check};
use co3::pipeline::{eval_probe, load_checkpoint, pretrain, save_checkpoint, Co3Model, ProbeConfig, RunConfig};
use co3::shape_context::{finalize_distribution, raw_histograms, Layout, ScConfig};
use co3::Error;

#[derive(Parser)]
#[command(name = "co3", version, about = "Cooperative contrastive and shape-context pretraining on synthetic LiDAR scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled vehicle / infrastructure scene pairs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene parameters are taken from this run config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pretrain an encoder and write a checkpoint plus per-step metrics.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Linear-probe accuracy of a checkpoint's frozen encoder.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config the checkpoint was trained with (architecture and voxels).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Shape-context histogram of every point of a cloud among all points.
    ShapeContext {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        r1: f64,
        #[arg(long, default_value_t = 4.0)]
        r2: f64,
        #[arg(long, default_value_t = 4)]
        nbins_xy: usize,
        #[arg(long, default_value_t = 4)]
        nbins_zy: usize,
        /// Use azimuth sectors only.
        #[arg(long)]
        planar: bool,
        #[arg(long, default_value_t = 4.0)]
        sf_csp: f64,
        /// Emit finalized distributions instead of raw counts.
        #[arg(long)]
        finalize: bool,
    },
    /// Check analytic gradients of the full objective against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check every n-th parameter.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence(_) => 4,
        _ => 3,
    }
}

fn load_config(path: Option<&Path>) -> co3::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> co3::Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Path { path: path.to_path_buf(), source })
}

fn run(cli: Cli) -> co3::Result<ExitCode> {
    match cli.command {
        Command::Synth { out, scenes, seed, config } => {
            let cfg = load_config(config.as_deref())?;
            let pairs = generate_scenes(&cfg.scene, seed, scenes)?;
            write_scene_set(&out, &pairs)?;
            eprintln!("wrote {} scene pairs to {}", pairs.len(), out.display());
        }
        Command::Pretrain { config, out, metrics } => {
            let cfg = load_config(config.as_deref())?;
            let (model, m) = pretrain(&cfg)?;
            save_checkpoint(&model.stacks(), &out)?;
            write_text(&metrics, &m.to_text())?;
            if m.skipped > 0 {
                eprintln!("warning: {} steps skipped for lack of correspondences", m.skipped);
            }
            if let Some(last) = m.last() {
                let l = last.loss;
                eprintln!("step {}: L {:.4} pos_cos {:.4} neg_cos {:.4}", last.step, l.value, l.pos_cos, l.neg_cos);
            }
        }
        Command::Eval { ckpt, scenes, seed, config } => {
            let cfg = load_config(config.as_deref())?;
            let model = Co3Model::from_stacks(&cfg, load_checkpoint(&ckpt)?)?;
            let pairs = read_scene_set(&scenes)?;
            let report = eval_probe(&model, &pairs, &cfg, &ProbeConfig { seed, ..ProbeConfig::default() })?;
            println!("accuracy {:.6} train_voxels {} test_voxels {}", report.accuracy, report.train_voxels, report.test_voxels);
        }
        Command::ShapeContext { input, out, r1, r2, nbins_xy, nbins_zy, planar, sf_csp, finalize } => {
            let layout = if planar { Layout::Planar } else { Layout::AzimuthElevation };
            let cfg = ScConfig { r1, r2, nbins_xy, nbins_zy: if planar { 1 } else { nbins_zy }, layout };
            cfg.validate()?;
            let cloud = read_cloud(&input)?;
            let mut sc = raw_histograms(cloud.positions(), cloud.positions(), &cfg);
            if finalize {
                sc = finalize_distribution(&sc, sf_csp);
            }
            let mut text = String::new();
            for r in 0..sc.rows() {
                let row: Vec<String> = sc.row(r).iter().map(|v| v.to_string()).collect();
                writeln!(text, "{}", row.join(" ")).unwrap();
            }
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::GradCheck { seed, stride } => {
            let r = run_grad_check(&grad_check_config(seed), stride)?;
            println!(
                "params {} checked {} loss {:.6} max_rel_err {:.3e} mutated_err {:.3e}",
                r.params, r.checked, r.loss, r.max_rel_err, r.mutated_err
            );
            if !(r.max_rel_err <= 1e-4 && r.mutated_err > 1e-2) {
                eprintln!("gradient check failed");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
