use std::path::Path;

use torsotext::config::ScoreSource;
use torsotext::imaging::load_frame_sequence;
use torsotext::pipeline::run_on_frames;
use torsotext::synth::{generate_scene, random_scene, SceneTruth};
use torsotext::{run_pipeline, FloatMap, PipelineConfig};

fn scene(seed: u64, dir: &Path) -> SceneTruth {
    let spec = random_scene(seed, 320, 288).unwrap();
    generate_scene(&spec, 12, dir.join("frames")).unwrap()
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    scene(3, dir.path());
    let config = PipelineConfig::default();
    let a = run_pipeline(
        dir.path().join("frames"),
        &config,
        Some(&dir.path().join("a")),
    )
    .unwrap();
    let b = run_pipeline(
        dir.path().join("frames"),
        &config,
        Some(&dir.path().join("b")),
    )
    .unwrap();
    assert_eq!(a, b);
    let (ta, tb) = (
        read_tree(&dir.path().join("a")),
        read_tree(&dir.path().join("b")),
    );
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    for name in [
        "window.json",
        "torso.json",
        "det.json",
        "overlay.png",
        "skin/components.json",
    ] {
        assert!(ta.iter().any(|(p, _)| p == name), "missing {name}");
    }
}

#[test]
fn finds_the_torso_and_text_of_a_generated_scene() {
    let dir = tempfile::tempdir().unwrap();
    let truth = scene(1, dir.path());
    let out = run_pipeline(dir.path().join("frames"), &PipelineConfig::default(), None).unwrap();
    let person = &truth.spec.persons[0];
    assert!(out
        .torso
        .torsos
        .iter()
        .any(|t| t.rect.iou(&person.torso) >= 0.5));
    assert!(out
        .text_boxes()
        .iter()
        .any(|b| b.iou(&person.text_box) >= 0.5));
}

#[test]
fn duplicated_frames_give_identical_frame_records() {
    let dir = tempfile::tempdir().unwrap();
    scene(5, dir.path());
    let frames = load_frame_sequence(dir.path().join("frames"), "*.png").unwrap();
    let copies: Vec<_> = (0..6).map(|i| frames[4].clone().with_index(i)).collect();
    let out_dir = dir.path().join("out");
    let out = run_on_frames(&copies, &PipelineConfig::default(), Some(&out_dir)).unwrap();
    assert_eq!(out.window.window.end, 1);
    let a = std::fs::read(out_dir.join("frames/0000.json")).unwrap();
    let b = std::fs::read(out_dir.join("frames/0001.json")).unwrap();
    assert_eq!(a, b);
    assert!(out.frames.iter().all(|(_, f)| f.self_partition));
}

#[test]
fn score_maps_from_files_are_decoded_inside_the_torso() {
    let dir = tempfile::tempdir().unwrap();
    let truth = scene(2, dir.path());
    let person = &truth.spec.persons[0];
    let (w, h) = (truth.spec.width, truth.spec.height);
    let tb = person.text_box;
    let pixel = FloatMap::from_fn(w, h, |x, y| tb.contains(x as i32, y as i32) as u8 as f32);
    let links = FloatMap::new(w, h, 8, vec![1.0; w * h * 8]).unwrap();
    let (pp, lp) = (dir.path().join("pixel.f32m"), dir.path().join("links.f32m"));
    pixel.write_f32m(&pp).unwrap();
    links.write_f32m(&lp).unwrap();
    let config = PipelineConfig {
        scores: ScoreSource::Files {
            pixel: pp,
            links: lp,
        },
        ..PipelineConfig::default()
    };
    let out = run_pipeline(dir.path().join("frames"), &config, None).unwrap();
    let torso = out
        .torso
        .torsos
        .iter()
        .find(|t| t.rect.contains_rect(&tb))
        .expect("torso around the text");
    assert!(torso.rect.contains_rect(&tb));
    assert!(out.text_boxes().contains(&tb));
}

#[test]
fn detect_all_frames_covers_the_window() {
    let dir = tempfile::tempdir().unwrap();
    scene(4, dir.path());
    let config = PipelineConfig {
        detect_all_frames: true,
        overlay: false,
        ..PipelineConfig::default()
    };
    let out = run_pipeline(dir.path().join("frames"), &config, None).unwrap();
    let w = &out.window.window;
    let indices: Vec<usize> = out.detections.frames.iter().map(|f| f.index).collect();
    assert_eq!(indices, (w.start..=w.end).collect::<Vec<_>>());
}

#[test]
fn bad_inputs_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_pipeline(dir.path(), &PipelineConfig::default(), None).unwrap_err();
    assert!(err.is_input_error());

    scene(0, dir.path());
    let frames = load_frame_sequence(dir.path().join("frames"), "*.png").unwrap();
    let err = run_on_frames(&frames[..1], &PipelineConfig::default(), None).unwrap_err();
    assert!(!err.to_string().is_empty());
}

#[test]
fn config_round_trips_and_fills_defaults() {
    let config = PipelineConfig {
        seed: 17,
        detect_all_frames: true,
        ..PipelineConfig::default()
    };
    assert_eq!(
        PipelineConfig::from_json(&config.to_json()).unwrap(),
        config
    );
    let partial =
        PipelineConfig::from_json(r#"{"seed": 4, "window": {"z_threshold": 3.0}}"#).unwrap();
    assert_eq!(partial.seed, 4);
    assert_eq!(partial.window.z_threshold, 3.0);
    assert_eq!(
        partial.window.max_window,
        PipelineConfig::default().window.max_window
    );
    assert!(
        PipelineConfig::from_json(r#"{"window": {"z_threshold": -1}}"#)
            .unwrap_err()
            .is_input_error()
    );
    assert!(PipelineConfig::from_json("{").unwrap_err().is_input_error());
}
