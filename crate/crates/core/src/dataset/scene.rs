//! On-disk scene layout:
//!
//! ```text
//! <scene>/input/in000001.ppm ...
//! <scene>/gt/gt000001.pgm ...
//! <scene>/ROI.pgm            optional, > 0 marks the region of interest
//! <scene>/train_ids.txt      optional, one frame id per line
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{load_pixmap, normalize, pad_to_multiple, Pixmap};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::training::{gt, Target, TrainFrame};

pub const INPUT_DIR: &str = "input";
pub const GT_DIR: &str = "gt";
pub const ROI_FILE: &str = "ROI.pgm";
pub const TRAIN_IDS_FILE: &str = "train_ids.txt";

pub fn input_name(id: u32) -> String {
    format!("in{id:06}.ppm")
}

pub fn gt_name(id: u32) -> String {
    format!("gt{id:06}.pgm")
}

pub fn mask_name(id: u32) -> String {
    format!("bin{id:06}.pgm")
}

pub fn prob_name(id: u32) -> String {
    format!("prob{id:06}.pgm")
}

/// Ids of files named `<prefix><digits>.<ext>` in `dir`, ascending.
pub fn numbered_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<u32>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(digits) = name
            .strip_prefix(prefix)
            .and_then(|s| s.strip_suffix(ext))
            .and_then(|s| s.strip_suffix('.'))
        else {
            continue;
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let id: u32 = digits
            .parse()
            .map_err(|_| Error::Data(format!("{}: frame number out of range", entry.path().display())))?;
        if !ids.insert(id) {
            return Err(Error::Data(format!("{}: duplicate frame id {id}", dir.display())));
        }
    }
    Ok(ids.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneLayout {
    pub root: PathBuf,
    pub input_dir: PathBuf,
    /// Present when the scene carries ground truth.
    pub gt_dir: Option<PathBuf>,
    pub roi: Option<PathBuf>,
    pub train_ids: Option<PathBuf>,
    /// All frame ids found in the input directory, ascending.
    pub ids: Vec<u32>,
}

fn optional_file(path: PathBuf) -> Option<PathBuf> {
    path.is_file().then_some(path)
}

/// Scene with inputs and matching ground truth; every input frame must have
/// a label map and vice versa.
pub fn discover_scene(root: &Path) -> Result<SceneLayout> {
    let mut layout = discover_inputs(root)?;
    let gt_dir = root.join(GT_DIR);
    if !gt_dir.is_dir() {
        return Err(Error::Data(format!("{}: no '{GT_DIR}' directory", root.display())));
    }
    let gt_ids = numbered_files(&gt_dir, "gt", "pgm")?;
    if let Some(id) = layout.ids.iter().find(|id| gt_ids.binary_search(id).is_err()) {
        return Err(Error::Data(format!(
            "frame {id}: {} has no ground truth {}",
            input_name(*id),
            gt_dir.join(gt_name(*id)).display()
        )));
    }
    if let Some(id) = gt_ids.iter().find(|id| layout.ids.binary_search(id).is_err()) {
        return Err(Error::Data(format!("frame {id}: {} has no input frame", gt_name(*id))));
    }
    layout.gt_dir = Some(gt_dir);
    Ok(layout)
}

/// Scene where only the input frames are required.
pub fn discover_inputs(root: &Path) -> Result<SceneLayout> {
    let input_dir = root.join(INPUT_DIR);
    if !input_dir.is_dir() {
        return Err(Error::Data(format!("{}: no '{INPUT_DIR}' directory", root.display())));
    }
    let ids = numbered_files(&input_dir, "in", "ppm")?;
    if ids.is_empty() {
        return Err(Error::Data(format!("{}: no input frames", input_dir.display())));
    }
    Ok(SceneLayout {
        root: root.to_path_buf(),
        input_dir,
        gt_dir: None,
        roi: optional_file(root.join(ROI_FILE)),
        train_ids: optional_file(root.join(TRAIN_IDS_FILE)),
        ids,
    })
}

impl SceneLayout {
    pub fn input_path(&self, id: u32) -> PathBuf {
        self.input_dir.join(input_name(id))
    }

    pub fn gt_path(&self, id: u32) -> Option<PathBuf> {
        self.gt_dir.as_ref().map(|d| d.join(gt_name(id)))
    }

    /// Ids listed in the subset file, or every frame when there is none.
    /// Listed ids must exist in the scene.
    pub fn training_ids(&self) -> Result<Vec<u32>> {
        let Some(path) = &self.train_ids else {
            return Ok(self.ids.clone());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ids = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let id: u32 = line
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: '{line}' is not a frame id", n + 1)))?;
            if self.ids.binary_search(&id).is_err() {
                return Err(Error::Data(format!(
                    "frame {id} listed in {} is missing from {}",
                    path.display(),
                    self.input_dir.display()
                )));
            }
            ids.insert(id);
        }
        Ok(ids.into_iter().collect())
    }

    /// Region of interest as a per-pixel flag, or `None` for the full frame.
    pub fn load_roi(&self, width: usize, height: usize) -> Result<Option<Vec<bool>>> {
        let Some(path) = &self.roi else { return Ok(None) };
        let img = load_pixmap(path)?;
        if img.channels != 1 || (img.width, img.height) != (width, height) {
            return Err(Error::Data(format!(
                "{}: ROI is {}x{}x{}, frames are {width}x{height} gray",
                path.display(),
                img.width,
                img.height,
                img.channels
            )));
        }
        Ok(Some(img.data.iter().map(|&v| v > 0).collect()))
    }

    pub fn load_input(&self, id: u32) -> Result<Pixmap> {
        let path = self.input_path(id);
        let img = load_pixmap(&path)?;
        if img.channels != 3 {
            return Err(Error::format(&path, "input frames must be RGB (P6)"));
        }
        Ok(img)
    }

    /// Label map of a frame, checked against the known label values.
    pub fn load_gt(&self, id: u32) -> Result<Pixmap> {
        let path = self
            .gt_path(id)
            .ok_or_else(|| Error::Data(format!("{}: scene has no ground truth", self.root.display())))?;
        let img = load_pixmap(&path)?;
        if img.channels != 1 {
            return Err(Error::format(&path, "ground truth must be gray (P5)"));
        }
        validate_labels(&img, &path)?;
        Ok(img)
    }

    /// Loads one frame with its ground truth and region of interest.
    pub fn load_frame<T: Scalar>(&self, id: u32) -> Result<FrameRecord<T>> {
        let input = self.load_input(id)?;
        let label = self.load_gt(id)?;
        if (input.width, input.height) != (label.width, label.height) {
            return Err(Error::Data(format!(
                "frame {id}: input is {}x{} but ground truth is {}x{}",
                input.width, input.height, label.width, label.height
            )));
        }
        let roi = self.load_roi(input.width, input.height)?;
        Ok(FrameRecord {
            id,
            width: input.width,
            height: input.height,
            image: normalize(&input),
            gt: label.data,
            roi,
        })
    }

    /// Loads `ids` in order and checks that all frames share one size.
    pub fn load_frames<T: Scalar>(&self, ids: &[u32]) -> Result<Vec<FrameRecord<T>>> {
        let frames = ids.iter().map(|&id| self.load_frame(id)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = frames.first() {
            if let Some(f) = frames.iter().find(|f| (f.width, f.height) != (first.width, first.height)) {
                return Err(Error::Data(format!(
                    "frame {} is {}x{} but frame {} is {}x{}",
                    f.id, f.width, f.height, first.id, first.width, first.height
                )));
            }
        }
        Ok(frames)
    }
}

fn validate_labels(img: &Pixmap, path: &Path) -> Result<()> {
    match img.data.iter().position(|v| !gt::ALL.contains(v)) {
        None => Ok(()),
        Some(i) => Err(Error::Data(format!(
            "{}: unknown ground-truth value {} at row {}, col {}",
            path.display(),
            img.data[i],
            i / img.width,
            i % img.width
        ))),
    }
}

/// One annotated frame at its original size.
#[derive(Debug, Clone)]
pub struct FrameRecord<T: Scalar = f32> {
    pub id: u32,
    pub width: usize,
    pub height: usize,
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub image: Tensor<T>,
    /// Label map, row-major.
    pub gt: Vec<u8>,
    /// Region of interest, `None` meaning the full frame.
    pub roi: Option<Vec<bool>>,
}

impl<T: Scalar> FrameRecord<T> {
    pub fn target(&self) -> Result<Target> {
        Target::from_gt(self.height, self.width, &self.gt, self.roi.as_deref())
    }

    /// Input and target padded to multiples of 4; the padding is never
    /// evaluated.
    pub fn to_train_frame(&self) -> Result<TrainFrame<T>> {
        let (input, _) = pad_to_multiple(&self.image, 4)?;
        let s = input.shape();
        let target = self.target()?.padded(s.h, s.w);
        TrainFrame::new(self.id, input, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::save_pixmap;

    fn write_scene(root: &Path, ids: &[u32], gt_ids: &[u32]) {
        fs::create_dir_all(root.join(INPUT_DIR)).unwrap();
        fs::create_dir_all(root.join(GT_DIR)).unwrap();
        for &id in ids {
            let img = Pixmap::rgb(6, 5, vec![id as u8; 90]).unwrap();
            save_pixmap(&img, &root.join(INPUT_DIR).join(input_name(id))).unwrap();
        }
        for &id in gt_ids {
            let mut labels = vec![0u8; 30];
            labels[7] = 255;
            labels[8] = 170;
            save_pixmap(&Pixmap::gray(6, 5, labels).unwrap(), &root.join(GT_DIR).join(gt_name(id))).unwrap();
        }
    }

    #[test]
    fn ordered_discovery() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<u32> = (1..=10).rev().collect();
        write_scene(dir.path(), &ids, &ids);
        fs::write(dir.path().join(INPUT_DIR).join("notes.txt"), "x").unwrap();
        let layout = discover_scene(dir.path()).unwrap();
        assert_eq!(layout.ids, (1..=10).collect::<Vec<_>>());
        assert_eq!(layout.training_ids().unwrap(), layout.ids);
        let frames = layout.load_frames::<f32>(&layout.ids).unwrap();
        assert_eq!(frames.len(), 10);
        assert_eq!(frames[3].id, 4);
        assert_eq!(frames[3].image.at(0, 0, 0, 0), 4.0 / 255.0);
    }

    #[test]
    fn subset_file() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<u32> = (1..=200).collect();
        write_scene(dir.path(), &ids, &ids);
        let listed: Vec<u32> = (0..25).map(|i| 200 - i * 7).collect();
        let text: String = listed.iter().map(|id| format!("{id}\n")).collect();
        fs::write(dir.path().join(TRAIN_IDS_FILE), text).unwrap();
        let layout = discover_scene(dir.path()).unwrap();
        let mut expected = listed.clone();
        expected.sort_unstable();
        assert_eq!(layout.training_ids().unwrap(), expected);

        fs::write(dir.path().join(TRAIN_IDS_FILE), "3\n999\n").unwrap();
        let err = discover_scene(dir.path()).unwrap().training_ids().unwrap_err();
        assert!(err.to_string().contains("999"), "{err}");
    }

    #[test]
    fn missing_gt_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &[1, 2, 3, 4, 5, 6], &[1, 2, 3, 4, 6]);
        let err = discover_scene(dir.path()).unwrap_err();
        assert!(err.to_string().contains("gt000005"), "{err}");
        assert!(discover_inputs(dir.path()).is_ok());
    }

    #[test]
    fn bad_label_rejected_with_position() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &[1], &[1]);
        let mut labels = vec![0u8; 30];
        labels[13] = 77;
        save_pixmap(&Pixmap::gray(6, 5, labels).unwrap(), &dir.path().join(GT_DIR).join(gt_name(1))).unwrap();
        let err = discover_scene(dir.path()).unwrap().load_frame::<f32>(1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("77") && msg.contains("row 2, col 1"), "{msg}");
    }

    #[test]
    fn roi_and_padding() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &[1], &[1]);
        let mut roi = vec![255u8; 30];
        roi[7] = 0;
        save_pixmap(&Pixmap::gray(6, 5, roi).unwrap(), &dir.path().join(ROI_FILE)).unwrap();
        let layout = discover_scene(dir.path()).unwrap();
        let frame = layout.load_frame::<f32>(1).unwrap();
        let tf = frame.to_train_frame().unwrap();
        assert_eq!((tf.input.shape().h, tf.input.shape().w), (8, 8));
        // pixel 7 is foreground but outside the ROI, pixel 8 is unknown
        assert_eq!(tf.target.evaluable(), 28);
        assert!(!tf.target.valid[8 + 1]);
        assert!(!tf.target.valid[6] && !tf.target.valid[7 * 8]);

        save_pixmap(&Pixmap::gray(5, 5, vec![1; 25]).unwrap(), &dir.path().join(ROI_FILE)).unwrap();
        assert!(discover_scene(dir.path()).unwrap().load_frame::<f32>(1).is_err());
    }
}
