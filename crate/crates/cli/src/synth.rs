use std::path::PathBuf;

use fgseg::dataset::{synth_scene, write_scene};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// JSON run configuration; only its "synth" section is used
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene directory to create
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frame width [config default: 64]
    #[arg(long)]
    pub width: Option<usize>,
    /// Frame height [config default: 64]
    #[arg(long)]
    pub height: Option<usize>,
    /// Number of frames [config default: 40]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Side of the moving square [config default: 16]
    #[arg(long)]
    pub square: Option<usize>,
    /// Per-pixel Gaussian noise, in 8-bit units [config default: 0]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Background and trajectory seed [config default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let mut s = cfg.synth;
    if let Some(v) = args.width {
        s.width = v;
    }
    if let Some(v) = args.height {
        s.height = v;
    }
    if let Some(v) = args.frames {
        s.frames = v;
    }
    if let Some(v) = args.square {
        s.square = v;
    }
    if let Some(v) = args.noise {
        s.noise = v;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    s.validate()?;
    let out = args
        .out
        .or(cfg.out)
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set \"out\""))?;
    let frames = synth_scene(&s)?;
    write_scene(&out, &frames)?;
    eprintln!(
        "wrote {} frames of {}x{} to {}",
        frames.len(),
        s.width,
        s.height,
        out.display()
    );
    Ok(())
}
