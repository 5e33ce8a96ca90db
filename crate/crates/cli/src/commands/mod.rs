pub mod eval;
pub mod infer;
pub mod supervision;
pub mod synth;
pub mod train;

use hdrfuse::data::{list_scene_dirs, load_scene, Scene};
use hdrfuse::{Error, Result};
use std::path::Path;

/// Loads every scene under a dataset root, erroring when none exist.
pub fn load_dataset(root: &Path) -> Result<Vec<Scene>> {
    let dirs = list_scene_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no scene directories under {}",
            root.display()
        )));
    }
    dirs.iter().map(|d| load_scene(d)).collect()
}
