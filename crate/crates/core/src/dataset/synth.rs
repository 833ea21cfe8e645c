//! Synthetic scene: a static textured background with a red square moving
//! on a bouncing trajectory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::scene::{gt_name, input_name, GT_DIR, INPUT_DIR};
use crate::dataset::{save_pixmap, Pixmap};
use crate::error::{Error, Result};
use crate::rng::{streams, Rng};
use crate::training::gt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Id of the first frame.
    pub first_id: u32,
    /// Side length of the moving square.
    pub square: usize,
    /// Largest per-axis displacement per frame, in pixels.
    pub max_speed: usize,
    /// Standard deviation of per-frame Gaussian noise, in 8-bit units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 40,
            first_id: 1,
            square: 16,
            max_speed: 4,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthSceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::Config("synthetic scene needs non-zero size and frame count".into()));
        }
        if self.square == 0 || self.square > self.width || self.square > self.height {
            return Err(Error::Config(format!(
                "square of {} px does not fit a {}x{} frame",
                self.square, self.width, self.height
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be >= 0", self.noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub id: u32,
    pub input: Pixmap,
    pub gt: Pixmap,
    /// Top-left corner `(row, col)` of the square.
    pub position: (usize, usize),
}

pub const SQUARE_COLOR: [u8; 3] = [220, 30, 30];

fn background(cfg: &SynthSceneConfig, rng: &mut Rng) -> Vec<f64> {
    let (w, h) = (cfg.width, cfg.height);
    // a few random plane waves per channel, plus fixed fine grain
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            let angle = rng.uniform() * std::f64::consts::TAU;
            let freq = 0.05 + 0.35 * rng.uniform();
            [freq * angle.cos(), freq * angle.sin(), rng.uniform() * std::f64::consts::TAU, 0.0]
        })
        .collect();
    let base = [50.0, 120.0, 130.0];
    let amp = [25.0, 60.0, 60.0];
    let mut out = vec![0.0; w * h * 3];
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let s: f64 = waves[c * 3..c * 3 + 3]
                    .iter()
                    .map(|k| (k[0] * i as f64 + k[1] * j as f64 + k[2]).sin())
                    .sum::<f64>()
                    / 3.0;
                let grain = (rng.uniform() - 0.5) * 20.0;
                out[(i * w + j) * 3 + c] = base[c] + amp[c] * s + grain;
            }
        }
    }
    out
}

/// Advances one axis, reflecting off `[0, limit]`.
fn bounce(pos: i64, vel: &mut i64, limit: i64) -> i64 {
    let mut next = pos + *vel;
    if next < 0 || next > limit {
        *vel = -*vel;
        next = (pos + *vel).clamp(0, limit);
    }
    next
}

/// Generates the scene; identical configs give bit-identical frames.
pub fn synth_scene(cfg: &SynthSceneConfig) -> Result<Vec<SynthFrame>> {
    cfg.validate()?;
    let mut rng = Rng::with_stream(cfg.seed, streams::SYNTH);
    let bg = background(cfg, &mut rng);
    let (w, h, s) = (cfg.width, cfg.height, cfg.square);
    let (lim_r, lim_c) = ((h - s) as i64, (w - s) as i64);
    let mut r = rng.below(lim_r as u64 + 1) as i64;
    let mut c = rng.below(lim_c as u64 + 1) as i64;
    let speed = cfg.max_speed as u64;
    let velocity = |rng: &mut Rng| {
        let v = 1 + rng.below(speed.max(1)) as i64;
        if rng.bernoulli(0.5) {
            v
        } else {
            -v
        }
    };
    let (mut vr, mut vc) = if speed == 0 { (0, 0) } else { (velocity(&mut rng), velocity(&mut rng)) };

    let mut frames = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        if k > 0 {
            r = bounce(r, &mut vr, lim_r);
            c = bounce(c, &mut vc, lim_c);
        }
        let (r0, c0) = (r as usize, c as usize);
        let inside = |i: usize, j: usize| (r0..r0 + s).contains(&i) && (c0..c0 + s).contains(&j);
        let mut input = Vec::with_capacity(w * h * 3);
        let mut labels = Vec::with_capacity(w * h);
        for i in 0..h {
            for j in 0..w {
                let fg = inside(i, j);
                labels.push(if fg { gt::MOVING } else { gt::STATIC });
                for ch in 0..3 {
                    let mut v = if fg { SQUARE_COLOR[ch] as f64 } else { bg[(i * w + j) * 3 + ch] };
                    if cfg.noise > 0.0 {
                        v += cfg.noise * rng.normal();
                    }
                    input.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        frames.push(SynthFrame {
            id: cfg.first_id + k as u32,
            input: Pixmap::rgb(w, h, input)?,
            gt: Pixmap::gray(w, h, labels)?,
            position: (r0, c0),
        });
    }
    Ok(frames)
}

/// Writes frames in the standard scene layout under `root`.
pub fn write_scene(root: &Path, frames: &[SynthFrame]) -> Result<()> {
    for dir in [INPUT_DIR, GT_DIR] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for f in frames {
        save_pixmap(&f.input, &root.join(INPUT_DIR).join(input_name(f.id)))?;
        save_pixmap(&f.gt, &root.join(GT_DIR).join(gt_name(f.id)))?;
    }
    Ok(())
}
