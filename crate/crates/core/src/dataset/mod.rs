//! Scene IO, normalisation and the synthetic test scene.

mod image;
mod pixmap;
pub mod scene;
mod synth;

pub use image::{crop, mask_pixmap, normalize, pad_to_multiple, probability_pixmap, round_up, to_byte};
pub use pixmap::{decode_pixmap, encode_pixmap, load_pixmap, save_pixmap, Pixmap};
pub use scene::{discover_inputs, discover_scene, numbered_files, FrameRecord, SceneLayout};
pub use synth::{synth_scene, write_scene, SynthFrame, SynthSceneConfig, SQUARE_COLOR};
