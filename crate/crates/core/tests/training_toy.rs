//! Toy-scale training regressions: the structure phase on a small static
//! dataset must converge hard, reproduce its frozen loss curve, and its
//! product must not degrade the already-good color supervision.

use hdrfuse::data::synth::{synthesize_scene, MotionModel, SyntheticSpec};
use hdrfuse::metrics::psnr_u;
use hdrfuse::models::ModelSpec;
use hdrfuse::radiometry::RadiometryConfig;
use hdrfuse::supervision::{build_color_component, build_structure_component, ThresholdConfig};
use hdrfuse::training::{prepare_sample, train_structure_phase, TrainConfig, TrainingSample};
use hdrfuse::FlowEstimatorSpec;

const FIXTURE: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/toy_structure_curve.json"
);

fn toy_static_scenes() -> Vec<hdrfuse::data::synth::SyntheticScene> {
    (0..8)
        .map(|i| {
            let spec = SyntheticSpec {
                size: 64,
                seed: 4000 + i,
                motion: MotionModel::None,
                ..SyntheticSpec::default()
            };
            synthesize_scene(&spec, &RadiometryConfig::default()).unwrap()
        })
        .collect()
}

fn toy_samples(scenes: &[hdrfuse::data::synth::SyntheticScene]) -> Vec<TrainingSample> {
    let rad = RadiometryConfig::default();
    let thr = ThresholdConfig::default();
    let flow = FlowEstimatorSpec::default();
    scenes
        .iter()
        .map(|s| prepare_sample(&s.scene, &flow, &rad, &thr).unwrap())
        .collect()
}

#[test]
fn toy_structure_run_converges_and_matches_fixture() {
    let rad = RadiometryConfig::default();
    let flow = FlowEstimatorSpec::default();
    let scenes = toy_static_scenes();
    let samples = toy_samples(&scenes);

    let model_spec = ModelSpec { base_width: 8, blocks: 2, param_seed: 7, ..ModelSpec::default() };
    let cfg = TrainConfig { seed: 7, ..TrainConfig::desk_scale() };
    let (model, report) = train_structure_phase(&samples, None, &model_spec, &cfg).unwrap();

    // The 30-epoch toy run must end well below a quarter of its first-epoch
    // objective.
    let first = report.loss_curve[0];
    let last = *report.loss_curve.last().unwrap();
    assert!(
        last < 0.25 * first,
        "objective {last:.5} did not drop below 25% of epoch-1 {first:.5}"
    );

    // Frozen-curve regression. Regenerate with REGEN_FIXTURES=1 after an
    // intentional change to training numerics.
    if std::env::var_os("REGEN_FIXTURES").is_some() {
        std::fs::write(FIXTURE, serde_json::to_string_pretty(&report.loss_curve).unwrap())
            .unwrap();
    } else {
        let frozen: Vec<f64> =
            serde_json::from_str(&std::fs::read_to_string(FIXTURE).expect(
                "fixture missing; run with REGEN_FIXTURES=1 to create it",
            ))
            .unwrap();
        assert_eq!(frozen.len(), report.loss_curve.len());
        for (epoch, (a, b)) in frozen.iter().zip(report.loss_curve.iter()).enumerate() {
            let rel = (a - b).abs() / a.abs().max(1e-12);
            assert!(
                rel < 1e-6,
                "epoch {epoch}: curve {b:.9} deviates from fixture {a:.9}"
            );
        }
    }

    // On static scenes the structure component must not destroy the color
    // supervision: PSNR-u within 1 dB below it (or better).
    let mut psnr_stru = 0.0;
    let mut psnr_color = 0.0;
    for s in &scenes {
        let gt = s.scene.gt.as_ref().unwrap();
        let (y_color, aligned) = build_color_component(&s.scene.frames, &flow, &rad).unwrap();
        psnr_color += psnr_u(&y_color.pixels, &gt.pixels, &rad).unwrap();
        let y_stru = build_structure_component(&model, &aligned).unwrap();
        psnr_stru += psnr_u(&y_stru.pixels, &gt.pixels, &rad).unwrap();
    }
    psnr_stru /= scenes.len() as f64;
    psnr_color /= scenes.len() as f64;
    assert!(
        psnr_stru >= psnr_color - 1.0,
        "structure component {psnr_stru:.2} dB fell more than 1 dB below \
         the color component {psnr_color:.2} dB"
    );
}
