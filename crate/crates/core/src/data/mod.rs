//! Dataset ingestion, HDR/LDR file I/O and the synthetic-scene oracle.

pub mod rgbe;
pub mod scene;
pub mod shdr;
pub mod synth;

pub use rgbe::{read_rgbe, write_rgbe};
pub use scene::{list_scene_dirs, load_scene, save_scene, Scene};
pub use shdr::{load_hdr_native, read_array, save_hdr_native, write_array};
pub use synth::{
    rect_motion_region, render_frame, synthesize_scene, synthesize_with_sidecar, MotionModel,
    MotionSidecar, Rect, SyntheticScene, SyntheticSpec,
};
