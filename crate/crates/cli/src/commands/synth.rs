use std::path::Path;

use hdrfuse::data::synth::{synthesize_with_sidecar, MotionModel, SyntheticSpec};
use hdrfuse::data::{save_scene, write_array};
use hdrfuse::radiometry::RadiometryConfig;
use hdrfuse::{Error, Result};

/// Deterministic per-scene motion assignment for the `mixed` model.
fn motion_for(kind: &str, index: usize) -> Result<MotionModel> {
    let spread = |i: usize, lo: i32, hi: i32| lo + (i as i32 % (hi - lo + 1));
    Ok(match kind {
        "none" => MotionModel::None,
        "shift" => MotionModel::GlobalShift {
            dx: spread(index, 1, 5),
            dy: spread(index / 2, -2, 2),
        },
        "rect" => MotionModel::MovingRect {
            dx: spread(index, 2, 6),
            dy: spread(index / 3, -3, 3),
        },
        "mixed" => match index % 4 {
            0 | 1 => MotionModel::MovingRect {
                dx: spread(index, 2, 6),
                dy: spread(index / 3, -3, 3),
            },
            2 => MotionModel::GlobalShift {
                dx: spread(index, 1, 5),
                dy: spread(index / 2, -2, 2),
            },
            _ => MotionModel::None,
        },
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown motion model {other:?} (expected none|shift|rect|mixed)"
            )))
        }
    })
}

pub fn run(out: &Path, scenes: usize, size: usize, motion: &str, seed: u64, bit_depth: u8) -> Result<()> {
    if scenes == 0 {
        return Err(Error::InvalidConfig("--scenes must be positive".into()));
    }
    let cfg = RadiometryConfig::default();
    std::fs::create_dir_all(out)?;

    for i in 0..scenes {
        let spec = SyntheticSpec {
            size,
            motion: motion_for(motion, i)?,
            bit_depth,
            seed: seed + i as u64,
            ..SyntheticSpec::default()
        };
        let (generated, sidecar) = synthesize_with_sidecar(&spec, &cfg)?;
        let dir = out.join(format!("scene_{i:03}"));
        save_scene(&dir, &generated.scene)?;
        sidecar.save(&dir.join("motion.json"))?;
        // True displacement fields, for alignment oracles.
        write_array(&dir.join("flow_to_1.shdr"), &generated.flow_to_1.vectors)?;
        write_array(&dir.join("flow_to_3.shdr"), &generated.flow_to_3.vectors)?;
    }
    println!("wrote {scenes} scenes to {}", out.display());
    Ok(())
}
