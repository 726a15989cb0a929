use std::fs;
use std::path::Path;

use actimg_core::pipeline::{extract_index, read_features, run_pipeline, PipelineConfig};
use actimg_core::synth::{demo_dataset, write_dataset, DemoSpec};
use actimg_core::ErrorClass;

fn small_config(dir: &Path) -> PipelineConfig {
    let spec = DemoSpec {
        classes: 3,
        per_class: 6,
        length: 60,
        ..Default::default()
    };
    let manifest = write_dataset(&demo_dataset(&spec).unwrap(), &dir.join("data")).unwrap();
    PipelineConfig {
        manifest: Some(manifest),
        output_dir: dir.join("run"),
        resize_height: 32,
        resize_width: 32,
        repeats: 4,
        svm_epochs: 30,
        ..Default::default()
    }
}

#[test]
fn demo_run_writes_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = run_pipeline(&cfg).unwrap();
    assert!((0.0..=1.0).contains(&out.report.mean_accuracy));
    assert_eq!(out.report.seeds, vec![0, 1, 2, 3]);

    let run = &cfg.output_dir;
    for f in [
        "report.txt",
        "confusion.csv",
        "seeds.log",
        "config.txt",
        "images/index.csv",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join("seeds.log")).unwrap().lines().count(), 4);
    // 18 samples of 60 steps -> 2 windows each, 3 modalities
    let pngs = fs::read_dir(run.join("images"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 18 * 2 * 3);
    let saved = PipelineConfig::parse(&fs::read_to_string(run.join("config.txt")).unwrap()).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn png_extraction_matches_in_memory_features() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    run_pipeline(&cfg).unwrap();
    let from_png = extract_index(&cfg.output_dir.join("images/index.csv")).unwrap();
    let stored = read_features(&cfg.output_dir.join("features")).unwrap();
    assert_eq!(from_png, stored);
}

#[test]
fn features_dir_skips_encoding() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let first = run_pipeline(&cfg).unwrap();

    let again = PipelineConfig {
        manifest: None,
        features_dir: Some(cfg.output_dir.join("features")),
        output_dir: tmp.path().join("again"),
        ..cfg.clone()
    };
    let second = run_pipeline(&again).unwrap();
    assert!(!again.output_dir.join("images").exists());
    assert_eq!(first.report, second.report);
}

#[test]
fn errors_carry_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        manifest: Some(tmp.path().join("absent.csv")),
        output_dir: tmp.path().join("run"),
        ..Default::default()
    };
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(err.to_string().starts_with("[ingest]"), "{err}");
    assert_eq!(err.class(), ErrorClass::Data);

    let none = PipelineConfig {
        output_dir: tmp.path().join("run"),
        ..Default::default()
    };
    let err = run_pipeline(&none).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Usage);
}
