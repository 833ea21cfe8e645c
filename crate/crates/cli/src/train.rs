use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fgseg::dataset::scene::{gt_name, input_name, GT_DIR, INPUT_DIR, ROI_FILE, TRAIN_IDS_FILE};
use fgseg::dataset::{discover_scene, synth_scene, write_scene};
use fgseg::network::{load_weights, save_weights, Network};
use fgseg::rng::streams;
use fgseg::training::{split_train_val, train_loop, Action, SplitSpec, TrainFrame};
use fgseg::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ModelFlags, RunConfig, TrainFlags};
use crate::error::{io_error, CliError, CliResult};

pub const WEIGHTS_FILE: &str = "model.fgs2";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Scene value that selects the built-in synthetic scene.
pub const SYNTH_SCENE: &str = "synth";

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene directory, or `synth` for the generated scene (written to <out>/scene)
    #[arg(long)]
    pub scene: Option<String>,
    /// Output directory for weights, log and manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Start from these weights instead of a fresh initialisation
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Print the merged configuration and exit without training
    #[arg(long)]
    pub dry_run: bool,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    config: RunConfig,
    seed: u64,
    split: SplitSpec,
    data: Vec<FileDigest>,
    weights: FileDigest,
    epochs: usize,
    best_epoch: usize,
    best_val_loss: f64,
    final_lr: f64,
    stopped_early: bool,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digest(root: &Path, rel: &str) -> CliResult<FileDigest> {
    Ok(FileDigest {
        path: rel.to_owned(),
        sha256: sha256_file(&root.join(rel))?,
    })
}

pub fn merged_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    args.model.apply(&mut cfg.model);
    args.train.apply(&mut cfg);
    if let Some(s) = &args.scene {
        cfg.scene = Some(PathBuf::from(s));
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    if let Some(w) = &args.weights {
        cfg.weights = Some(w.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let cfg = merged_config(&args)?;
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serialises"));
        return Ok(());
    }
    let scene = cfg.scene.clone().ok_or_else(|| CliError::usage("no scene: pass --scene or set \"scene\""))?;
    let out = cfg.out.clone().ok_or_else(|| CliError::usage("no output directory: pass --out or set \"out\""))?;
    let net = Network::new(cfg.model.clone())?;

    let root = if scene.as_os_str() == SYNTH_SCENE {
        let root = out.join("scene");
        let frames = synth_scene(&cfg.synth)?;
        write_scene(&root, &frames)?;
        root
    } else {
        scene
    };
    let layout = discover_scene(&root)?;
    let ids = layout.training_ids()?;
    let split = split_train_val(&ids, cfg.train.val_fraction, &mut Rng::with_stream(cfg.train.seed, streams::SPLIT))?;
    let records = layout.load_frames::<f32>(&ids)?;
    let pick = |wanted: &[u32]| -> CliResult<Vec<TrainFrame<f32>>> {
        records
            .iter()
            .filter(|r| wanted.binary_search(&r.id).is_ok())
            .map(|r| Ok(r.to_train_frame()?))
            .collect()
    };
    let (train, val) = (pick(&split.train)?, pick(&split.val)?);

    let init = match &cfg.weights {
        Some(path) => load_weights(path, &cfg.model)?,
        None => net.init_weights(&mut Rng::with_stream(cfg.model.seed, streams::INIT))?,
    };

    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_error(&log_path, e))?);
    let mut log_err = None;
    eprintln!(
        "training on {} frames, validating on {} ({} parameter tensors)",
        train.len(),
        val.len(),
        init.len()
    );
    let outcome = train_loop(&net, init, &train, &val, &cfg.train, |rec| {
        eprintln!(
            "epoch {:>3}  train {:.6}  val {:.6}  lr {:.0e}  {:?}",
            rec.epoch, rec.train_loss, rec.val_loss, rec.lr, rec.action
        );
        let line = serde_json::to_string(rec).expect("record serialises");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    });
    if let Some(e) = log_err {
        return Err(io_error(&log_path, e));
    }
    let outcome = outcome?;

    let weights_path = out.join(WEIGHTS_FILE);
    save_weights(&outcome.weights, &weights_path)?;

    let mut data = Vec::new();
    for id in &ids {
        data.push(digest(&root, &format!("{INPUT_DIR}/{}", input_name(*id)))?);
        data.push(digest(&root, &format!("{GT_DIR}/{}", gt_name(*id)))?);
    }
    for extra in [ROI_FILE, TRAIN_IDS_FILE] {
        if root.join(extra).is_file() {
            data.push(digest(&root, extra)?);
        }
    }
    let state = &outcome.state;
    let last = state.history.last().map(|r| r.action);
    let mut recorded = cfg.clone();
    recorded.scene = Some(root.clone());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.train.seed,
        config: recorded,
        split,
        data,
        weights: FileDigest {
            path: WEIGHTS_FILE.into(),
            sha256: sha256_file(&weights_path)?,
        },
        epochs: state.epoch,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        final_lr: state.current_lr(),
        stopped_early: last == Some(Action::Stop) && state.epoch < cfg.train.max_epochs,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&manifest_path, text + "\n").map_err(|e| io_error(&manifest_path, e))?;
    eprintln!(
        "best validation loss {:.6} at epoch {}; wrote {}",
        state.best_val_loss,
        state.best_epoch,
        weights_path.display()
    );
    Ok(())
}
