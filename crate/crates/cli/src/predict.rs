use std::fs;
use std::path::PathBuf;

use fgseg::dataset::scene::{mask_name, prob_name};
use fgseg::dataset::{crop, discover_inputs, mask_pixmap, normalize, pad_to_multiple, probability_pixmap, save_pixmap};
use fgseg::metrics::threshold_mask;
use fgseg::network::{load_weights, Network};

use crate::config::{ModelFlags, RunConfig};
use crate::error::{io_error, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct PredictArgs {
    /// JSON run configuration (its "model" section must match the weights)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Weight file written by `train`
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Scene directory with an input/ folder
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Directory for binNNNNNN.pgm masks (and probNNNNNN.pgm maps)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Foreground threshold on the probability map [default: 0.9]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write probability maps as round(p·255)
    #[arg(long)]
    pub prob: bool,
    #[command(flatten)]
    pub model: ModelFlags,
}

pub fn run(args: PredictArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    args.model.apply(&mut cfg.model);
    if let Some(t) = args.threshold {
        cfg.train.threshold = t;
    }
    cfg.validate()?;
    let weights_path = args
        .weights
        .or(cfg.weights.clone())
        .ok_or_else(|| CliError::usage("no weights: pass --weights or set \"weights\""))?;
    let scene = args
        .scene
        .or(cfg.scene.clone())
        .ok_or_else(|| CliError::usage("no scene: pass --scene or set \"scene\""))?;
    let out = args
        .out
        .or(cfg.out.clone())
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set \"out\""))?;

    let net = Network::new(cfg.model.clone())?;
    let weights = load_weights::<f32>(&weights_path, &cfg.model)?;
    let layout = discover_inputs(&scene)?;
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    for &id in &layout.ids {
        let img = layout.load_input(id)?;
        let (x, (h, w)) = pad_to_multiple(&normalize::<f32>(&img), 4)?;
        let p = crop(&net.predict(&weights, &x)?, h, w)?;
        p.ensure_finite(&format!("prediction for frame {id}"))?;
        let mask = threshold_mask(&p, cfg.train.threshold)?;
        save_pixmap(&mask_pixmap(&mask, w, h)?, &out.join(mask_name(id)))?;
        if args.prob {
            save_pixmap(&probability_pixmap(&p)?, &out.join(prob_name(id)))?;
        }
    }
    eprintln!(
        "wrote {} masks at threshold {} to {}",
        layout.ids.len(),
        cfg.train.threshold,
        out.display()
    );
    Ok(())
}
