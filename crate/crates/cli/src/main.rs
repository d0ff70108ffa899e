use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use torsotext::body::TorsoBox;
use torsotext::config::{DetectorConfig, ScoreSource};
use torsotext::eval::{evaluate, format_table, Annotation, AnnotationFile, LabeledBox};
use torsotext::features::compute_features;
use torsotext::imaging::{load_frame_sequence, FloatMap};
use torsotext::overlay::render_overlay;
use torsotext::pipeline::{
    find_window, fuse_frames, run_pipeline, skin_stage, torso_stage, write_json,
    write_skin_artifacts, WindowReport,
};
use torsotext::synth::{generate_scene, random_scene};
use torsotext::textdet::{decode_links, LinkScoreMaps};
use torsotext::{Error, PipelineConfig, Rect};

#[derive(Parser)]
#[command(
    name = "torsotext",
    version,
    about = "Torso-anchored text detection in frame sequences"
)]
struct Cli {
    /// Pipeline configuration (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gradient, coherence and fused feature maps of every frame.
    Fuse {
        frames: PathBuf,
        /// Also write 8-bit PNG previews.
        #[arg(long)]
        png: bool,
    },
    /// Temporal window and keyframe.
    Keyframes { frames: PathBuf },
    /// Pixel- and component-level skin masks.
    Skin { frames: PathBuf },
    /// Faces and torsos on the keyframe.
    Torso {
        frames: PathBuf,
        /// Precomputed face detections instead of the skin heuristic.
        #[arg(long)]
        faces: Option<PathBuf>,
    },
    /// Decodes text boxes from pixel/link score maps.
    Detect(DetectArgs),
    /// Scores detections against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        det: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Per-label breakdown.
        #[arg(long)]
        by_label: bool,
    },
    /// All stages from frames to text boxes.
    Pipeline {
        frames: PathBuf,
        #[arg(long)]
        faces: Option<PathBuf>,
        #[arg(long)]
        detect_all_frames: bool,
    },
    /// Renders synthetic runner scenes with ground truth.
    Synth {
        #[arg(long, default_value_t = 1)]
        scenes: u64,
        #[arg(long, default_value_t = 12)]
        frames: usize,
        #[arg(long, default_value_t = 320)]
        width: usize,
        #[arg(long, default_value_t = 288)]
        height: usize,
    },
}

#[derive(Args)]
struct DetectArgs {
    /// One-channel pixel score map (F32M).
    #[arg(long, requires = "links", conflicts_with = "baseline_from_fused")]
    scores: Option<PathBuf>,
    /// Eight-channel link score map (F32M), order E NE N NW W SW S SE.
    #[arg(long, requires = "scores")]
    links: Option<PathBuf>,
    /// Derive scores from a fused map instead.
    #[arg(long, requires = "fused")]
    baseline_from_fused: bool,
    #[arg(long)]
    fused: Option<PathBuf>,
    /// Crop `x,y,w,h` applied to the maps; its corner becomes the default offset.
    #[arg(long, value_parser = parse_rect)]
    crop: Option<Rect>,
    #[arg(long)]
    theta_pixel: Option<f64>,
    #[arg(long)]
    theta_link: Option<f64>,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    offset_x: Option<i32>,
    #[arg(long, allow_hyphen_values = true)]
    offset_y: Option<i32>,
    /// Frame index recorded in the output.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

fn parse_rect(s: &str) -> Result<Rect, String> {
    let v: Vec<i32> = s
        .split(',')
        .map(|p| p.trim().parse::<i32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [x, y, w, h] = v[..] else {
        return Err("expected x,y,w,h".into());
    };
    Rect::new(x, y, w, h).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TORSOTEXT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let out = cli.out_dir.as_path();
    std::fs::create_dir_all(out)?;

    match cli.command {
        Command::Fuse { frames, png } => fuse(&frames, &config, out, png),
        Command::Keyframes { frames } => {
            let frames = load_frame_sequence(&frames, &config.frame_pattern)?;
            let fused = fuse_frames(&frames, &config);
            let report = WindowReport::from(&find_window(&fused, 0, &config)?.window);
            write_json(&out.join("window.json"), &report)?;
            emit(&serde_json::to_string_pretty(&report)?)?;
            Ok(())
        }
        Command::Skin { frames } => {
            let frames = load_frame_sequence(&frames, &config.frame_pattern)?;
            let fused = fuse_frames(&frames, &config);
            let skin = skin_stage(&fused, &config)?;
            write_skin_artifacts(out, &skin)?;
            emit(&serde_json::to_string_pretty(&skin.summary().kept)?)?;
            Ok(())
        }
        Command::Torso { frames, faces } => {
            if let Some(path) = faces {
                config.detector = DetectorConfig::File { path };
            }
            let frames = load_frame_sequence(&frames, &config.frame_pattern)?;
            let fused = fuse_frames(&frames, &config);
            let skin = skin_stage(&fused, &config)?;
            let (_, report) = torso_stage(&frames, &skin, &config)?;
            let torsos: &[TorsoBox] = &report.torsos;
            write_json(&out.join("torso.json"), &torsos)?;
            let rects: Vec<Rect> = torsos.iter().map(|t| t.rect).collect();
            render_overlay(
                &frames[report.keyframe],
                &rects,
                &[],
                out.join("overlay.png"),
            )?;
            emit(&serde_json::to_string_pretty(&torsos)?)?;
            Ok(())
        }
        Command::Detect(args) => detect(args, &config, out),
        Command::Eval {
            gt,
            det,
            iou,
            by_label,
        } => {
            let report = evaluate(
                &AnnotationFile::read(gt)?,
                &AnnotationFile::read(det)?,
                iou,
                by_label,
            );
            write_json(&out.join("metrics.json"), &report)?;
            emit(format_table(&report).trim_end())?;
            Ok(())
        }
        Command::Pipeline {
            frames,
            faces,
            detect_all_frames,
        } => {
            if let Some(path) = faces {
                config.detector = DetectorConfig::File { path };
            }
            config.detect_all_frames |= detect_all_frames;
            let output = run_pipeline(&frames, &config, Some(out))?;
            info!(
                "{} torsos, {} text boxes",
                output.torso.torsos.len(),
                output.text_boxes().len()
            );
            emit(&serde_json::to_string_pretty(&output.detections)?)?;
            Ok(())
        }
        Command::Synth {
            scenes,
            frames,
            width,
            height,
        } => {
            for i in 0..scenes {
                let seed = config.seed.wrapping_add(i);
                let dir = if scenes == 1 {
                    out.to_path_buf()
                } else {
                    out.join(format!("scene_{i:03}"))
                };
                let spec = random_scene(seed, width, height)?;
                generate_scene(&spec, frames, &dir)?;
                emit(&dir.display().to_string())?;
            }
            Ok(())
        }
    }
}

fn fuse(frames: &Path, config: &PipelineConfig, out: &Path, png: bool) -> Result<(), Error> {
    use rayon::prelude::*;
    let frames = load_frame_sequence(frames, &config.frame_pattern)?;
    let dir = out.join("fuse");
    std::fs::create_dir_all(&dir)?;
    frames
        .par_iter()
        .try_for_each(|frame| -> Result<(), Error> {
            let f = compute_features(frame, &config.features);
            let maps: [(&str, &FloatMap); 5] = [
                ("gm", &f.gm.map),
                ("dc", &f.dc),
                ("gm_diff", &f.gm_diff),
                ("dc_diff", &f.dc_diff),
                ("fuse", &f.fused.map),
            ];
            for (name, map) in maps {
                let stem = format!("frame_{:04}.{name}", frame.index);
                map.write_f32m(dir.join(format!("{stem}.f32m")))?;
                if png {
                    map.to_gray_image().save(dir.join(format!("{stem}.png")))?;
                }
            }
            Ok(())
        })?;
    emit(&dir.display().to_string())?;
    Ok(())
}

fn detect(args: DetectArgs, config: &PipelineConfig, out: &Path) -> Result<(), Error> {
    let maps = match (&args.scores, &args.links, &args.fused) {
        (Some(p), Some(l), _) => LinkScoreMaps::read_f32m(p, l)?,
        (None, None, Some(f)) if args.baseline_from_fused => {
            let fused = FloatMap::read_f32m(f)?;
            let crop = match args.crop {
                Some(r) => fused.crop(checked_crop(r, fused.dims())?),
                None => fused,
            };
            LinkScoreMaps::baseline_from_fused(&crop)
        }
        _ => match &config.scores {
            ScoreSource::Files { pixel, links } => LinkScoreMaps::read_f32m(pixel, links)?,
            ScoreSource::BaselineFromFused => {
                return Err(Error::InvalidConfig(
                    "give --scores and --links, or --baseline-from-fused with --fused".into(),
                ))
            }
        },
    };
    let maps = match (args.crop, args.baseline_from_fused) {
        (Some(r), false) => {
            let r = checked_crop(r, maps.dims())?;
            LinkScoreMaps::new(maps.pixel().crop(r), maps.links().crop(r))?
        }
        _ => maps,
    };
    let d = &config.decode;
    let (ox, oy) = args.crop.map_or((0, 0), |r| (r.x, r.y));
    let (w, h) = maps.dims();
    let (w, h) = (w as i32, h as i32);
    let mut boxes = decode_links(
        &maps,
        args.theta_pixel.unwrap_or(d.theta_pixel),
        args.theta_link.unwrap_or(d.theta_link),
        args.min_area.unwrap_or(d.min_area),
    );
    if args.baseline_from_fused {
        // same rule as the pipeline: border-touching boxes trace the crop outline
        boxes.retain(|b| b.x > 0 && b.y > 0 && b.right() < w && b.bottom() < h);
    }
    let dx = args.offset_x.unwrap_or(ox);
    let dy = args.offset_y.unwrap_or(oy);
    let file = AnnotationFile {
        frames: vec![Annotation {
            index: args.index,
            boxes: boxes
                .into_iter()
                .map(|b| LabeledBox::from_rect(b.translate(dx, dy), None))
                .collect(),
        }],
    };
    file.write(out.join("det.json"))?;
    emit(&serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<(), Error> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn checked_crop(r: Rect, (w, h): (usize, usize)) -> Result<Rect, Error> {
    if r.clamp_to(w, h) != Some(r) {
        return Err(Error::InvalidConfig(format!(
            "crop {r:?} exceeds the {w}x{h} maps"
        )));
    }
    Ok(r)
}
