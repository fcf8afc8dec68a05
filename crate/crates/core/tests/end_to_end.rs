use pvmap_core::evaluate::{score_against_truth, sector_mismatches, TruthTable};
use pvmap_core::pipeline::{run_pipeline, NoImages, PipelineConfig};
use pvmap_core::raster::ImageRaster;
use pvmap_core::simulate::{gap_drop_fixture, presets, render_scene, Scene};
use pvmap_core::Result;

fn run(scene: &Scene, seed: u64) -> pvmap_core::pipeline::PipelineOutput {
    let images = |id: &str| -> Result<Option<ImageRaster>> { Ok(scene.frame_index(id).map(|i| scene.render(i))) };
    let mut cfg = PipelineConfig::new(scene.plant.params.rows_per_bench).with_seed(seed);
    cfg.fuse.fusion_min_sep = 0.3;
    run_pipeline(&scene.frames, &scene.all_detections(), &scene.cloud, &images, &[], &cfg).unwrap()
}

#[test]
fn zero_noise_presets_are_recovered() {
    for name in ["pp1-desk", "pp2-desk"] {
        let scene = render_scene(&presets::scene(name, 7).unwrap()).unwrap();
        let t = std::time::Instant::now();
        let out = run(&scene, 7);
        let s = score_against_truth(&out.optimized.model, &TruthTable::from_scene(&scene));
        assert!(t.elapsed().as_secs() < 60, "{name}");
        assert_eq!(s.recall, 1.0, "{name}");
        assert_eq!(s.tuple_accuracy, 1.0, "{name}");
        assert!(s.rmse < 1e-6, "{name}");
    }
}

#[test]
fn dropped_gap_module_is_repaired() {
    for all_rows in [false, true] {
        let spec = gap_drop_fixture(presets::scene("pp1-desk", 3).unwrap(), all_rows).unwrap();
        let scene = render_scene(&spec).unwrap();
        let (frame, module) = &spec.forced_drops[0];
        assert!(!scene.detections[scene.frame_index(frame).unwrap()].truth.contains(module));
        let out = run(&scene, 3);
        let truth = TruthTable::from_scene(&scene);
        assert_eq!(sector_mismatches(&out.optimized.model, &truth), Vec::<String>::new(), "all_rows {all_rows}");
        assert!(out.global.report.flags.is_empty(), "{:?}", out.global.report.flags);
        if all_rows {
            assert!(out.global.report.repairs.iter().any(|r| &r.frame_id == frame), "{:?}", out.global.report.repairs);
        }
    }
}

#[test]
fn zero_noise_scene_needs_no_images() {
    let scene = render_scene(&presets::scene("pp2-desk", 1).unwrap()).unwrap();
    let cfg = presets::pipeline("pp2-desk", 1).unwrap();
    let out = run_pipeline(&scene.frames, &scene.all_detections(), &scene.cloud, &NoImages, &[], &cfg).unwrap();
    let s = score_against_truth(&out.optimized.model, &TruthTable::from_scene(&scene));
    assert_eq!((s.recall, s.tuple_accuracy, s.spurious), (1.0, 1.0, 0));
}
