use std::fs;
use std::path::{Path, PathBuf};

use fgseg::dataset::scene::mask_name;
use fgseg::dataset::{discover_scene, load_pixmap, numbered_files};
use fgseg::metrics::{accumulate, aggregate, ConfusionCounts, FrameReport, VideoCounts};
use serde::Deserialize;

use crate::error::{io_error, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Directory of binNNNNNN.pgm masks for a single video
    #[arg(long, requires = "scene", conflicts_with = "list")]
    pub pred: Option<PathBuf>,
    /// Scene directory with gt/ (and optional ROI.pgm) for a single video
    #[arg(long, requires = "pred")]
    pub scene: Option<PathBuf>,
    /// Category name of the single video
    #[arg(long, default_value = "default")]
    pub category: String,
    /// Video name of the single video [default: scene directory name]
    #[arg(long)]
    pub video: Option<String>,
    /// JSON array of {"category", "video", "pred", "scene"} entries
    #[arg(long)]
    pub list: Option<PathBuf>,
    /// Include per-frame counts in the report
    #[arg(long)]
    pub per_frame: bool,
    /// Write the report here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub category: String,
    pub video: String,
    pub pred: PathBuf,
    pub scene: PathBuf,
}

fn load_mask(path: &Path, width: usize, height: usize) -> CliResult<Vec<bool>> {
    let img = load_pixmap(path)?;
    if img.channels != 1 || (img.width, img.height) != (width, height) {
        return Err(CliError::data(format!(
            "{}: mask is {}x{}x{}, expected {width}x{height} gray",
            path.display(),
            img.width,
            img.height,
            img.channels
        )));
    }
    if let Some(i) = img.data.iter().position(|&v| v != 0 && v != 255) {
        return Err(CliError::data(format!(
            "{}: mask value {} at row {}, col {} is neither 0 nor 255",
            path.display(),
            img.data[i],
            i / width,
            i % width
        )));
    }
    Ok(img.data.iter().map(|&v| v == 255).collect())
}

/// Scores one video. Every ground-truth frame needs a mask and every mask a
/// ground-truth frame.
pub fn score_video(entry: &VideoEntry, per_frame: bool) -> CliResult<VideoCounts> {
    let layout = discover_scene(&entry.scene)?;
    if !entry.pred.is_dir() {
        return Err(CliError::data(format!("{}: prediction directory not found", entry.pred.display())));
    }
    let pred_ids = numbered_files(&entry.pred, "bin", "pgm")?;
    if let Some(id) = layout.ids.iter().find(|id| pred_ids.binary_search(id).is_err()) {
        return Err(CliError::data(format!(
            "frame {id}: no mask {}",
            entry.pred.join(mask_name(*id)).display()
        )));
    }
    if let Some(id) = pred_ids.iter().find(|id| layout.ids.binary_search(id).is_err()) {
        return Err(CliError::data(format!(
            "{}: no ground truth for this frame in {}",
            entry.pred.join(mask_name(*id)).display(),
            entry.scene.display()
        )));
    }
    let mut counts = ConfusionCounts::default();
    let mut frames = Vec::new();
    let mut roi: Option<Option<Vec<bool>>> = None;
    for &id in &layout.ids {
        let label = layout.load_gt(id)?;
        let roi = match &roi {
            Some(r) => r,
            None => roi.insert(layout.load_roi(label.width, label.height)?),
        };
        let mask = load_mask(&entry.pred.join(mask_name(id)), label.width, label.height)?;
        let c = accumulate(&mask, &label.data, roi.as_deref(), label.width)?.counts;
        counts += c;
        if per_frame {
            frames.push(FrameReport { frame: id, counts: c });
        }
    }
    Ok(VideoCounts {
        category: entry.category.clone(),
        video: entry.video.clone(),
        counts,
        frames,
    })
}

fn entries(args: &EvalArgs) -> CliResult<Vec<VideoEntry>> {
    if let Some(list) = &args.list {
        let text = fs::read_to_string(list).map_err(|e| CliError::usage(format!("{}: {e}", list.display())))?;
        let entries: Vec<VideoEntry> =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", list.display())))?;
        if entries.is_empty() {
            return Err(CliError::usage(format!("{}: no videos listed", list.display())));
        }
        return Ok(entries);
    }
    match (&args.pred, &args.scene) {
        (Some(pred), Some(scene)) => {
            let video = args.video.clone().unwrap_or_else(|| {
                scene
                    .canonicalize()
                    .unwrap_or_else(|_| scene.clone())
                    .file_name()
                    .map_or_else(|| "video".to_owned(), |n| n.to_string_lossy().into_owned())
            });
            Ok(vec![VideoEntry {
                category: args.category.clone(),
                video,
                pred: pred.clone(),
                scene: scene.clone(),
            }])
        }
        _ => Err(CliError::usage("pass --pred and --scene, or --list")),
    }
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    let videos = entries(&args)?
        .iter()
        .map(|e| score_video(e, args.per_frame))
        .collect::<CliResult<Vec<_>>>()?;
    let report = aggregate(videos)?;
    let text = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|e| io_error(path, e))?,
        None => print!("{text}"),
    }
    Ok(())
}
