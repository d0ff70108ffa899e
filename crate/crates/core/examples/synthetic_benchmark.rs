//! Runs the pipeline over generated scenes and prints torso and text IoU.
//!
//! `cargo run --release --example synthetic_benchmark -- [scenes] [out_dir]`

use std::path::PathBuf;
use std::time::Instant;

use torsotext::synth::{generate_scene, random_scene};
use torsotext::{run_pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let scenes: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("torsotext-bench"));
    let config = PipelineConfig::default();
    let started = Instant::now();
    let (mut torso_hits, mut text_hits) = (0, 0);
    for seed in 0..scenes {
        let spec = random_scene(seed, 320, 288)?;
        let dir = root.join(format!("scene_{seed:03}"));
        generate_scene(&spec, 12, dir.join("frames"))?;
        let out = run_pipeline(dir.join("frames"), &config, Some(&dir.join("out")))?;
        let truth = spec.persons[0].torso;
        let torso = out
            .torso
            .torsos
            .iter()
            .map(|t| t.rect.iou(&truth))
            .fold(0.0, f64::max);
        let text_truth = spec.persons[0].text_box;
        let text = out
            .text_boxes()
            .iter()
            .map(|b| b.iou(&text_truth))
            .fold(0.0, f64::max);
        torso_hits += (torso >= 0.5) as usize;
        text_hits += (text >= 0.5) as usize;
        println!(
            "scene {seed:3}: window {}..={} torso IoU {torso:.3} text IoU {text:.3} torsos {} boxes {}",
            out.window.window.start,
            out.window.window.end,
            out.torso.torsos.len(),
            out.text_boxes().len()
        );
    }
    println!(
        "torso {torso_hits}/{scenes} text {text_hits}/{scenes} in {:.1}s",
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
