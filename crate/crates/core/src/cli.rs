//! Command-line front end. `run` returns the process exit code: 0 on success,
//! 1 on a usage error, 2 when processing fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::geometry::{offsets_to_homography, Homography, QuadOffsets};
use crate::image::{load_image, save_image};
use crate::metrics::{summarize, EvalRecord};
use crate::pipeline::{run_batch_paths, run_scene, PipelineConfig, SceneInput};
use crate::synthmeter::{random_spec, render, SpecRanges};
use crate::warp::warp_image;

#[derive(Debug, Parser)]
#[command(name = "meterread", version, about = "Pointer-meter reading toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render seeded synthetic meter scenes.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Corner jitter bound as a fraction of the image size (at most 0.15).
        #[arg(long)]
        distort: Option<f64>,
    },
    /// Warp an image by the inverse of a corner-offset homography.
    Align {
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON file holding `{"d": [[dx, dy], ...]}` for TL, TR, BR, BL.
        #[arg(long)]
        offsets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Square output side; defaults to the input size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Read one scene and print the result as JSON.
    Read {
        /// Scene base path, e.g. `scenes/scene_0000`.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Average relative and reference errors of a JSON-lines record file.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Read every scene in a directory and print a report.
    Batch {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
    },
}

type Failure = Box<dyn std::error::Error>;

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        Some(p) => Ok(PipelineConfig::from_json(&read_text(p)?)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn emit_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(p) = out {
        std::fs::write(p, &text).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn synth(count: usize, seed: u64, out: &Path, distort: Option<f64>) -> Result<(), Failure> {
    let ranges = SpecRanges {
        distortion_jitter: distort,
        ..SpecRanges::default()
    };
    for i in 0..count {
        let spec = random_spec(seed.wrapping_add(i as u64), &ranges)?;
        render(&spec)?.save(out, &format!("scene_{i:04}"))?;
    }
    Ok(())
}

fn align(input: &Path, offsets: &Path, out: &Path, size: Option<usize>) -> Result<(), Failure> {
    let img = load_image(input)?;
    let d: QuadOffsets = serde_json::from_str(&read_text(offsets)?)?;
    let (w, h) = (img.width(), img.height());
    let mut warp = offsets_to_homography(w, h, &d)?.inverse()?;
    let (ow, oh) = match size {
        Some(0) => return Err("--size must be positive".into()),
        Some(n) => {
            let k = |src: usize| (n as f64 - 1.0) / (src as f64 - 1.0).max(1.0);
            warp = Homography::scaling(k(w), k(h))?.compose(&warp)?;
            (n, n)
        }
        None => (w, h),
    };
    save_image(&warp_image(&img, &warp, ow, oh)?, out)?;
    Ok(())
}

fn eval(pred: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let mut records = Vec::new();
    for (i, line) in read_text(pred)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: EvalRecord =
            serde_json::from_str(line).map_err(|e| format!("{}:{}: {e}", pred.display(), i + 1))?;
        records.push(r);
    }
    emit_json(&summarize(&records)?, out)
}

/// Scene base paths in `dir`: every `<base>.json` with a sibling `<base>.png`.
fn scene_bases(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut bases = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix(".json") {
            if !stem.ends_with(".probs") && dir.join(format!("{stem}.png")).exists() {
                bases.push(dir.join(stem));
            }
        }
    }
    bases.sort();
    Ok(bases)
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Synth {
            count,
            seed,
            out,
            distort,
        } => synth(count, seed, &out, distort),
        Command::Align {
            input,
            offsets,
            out,
            size,
        } => align(&input, &offsets, &out, size),
        Command::Read { scene, config } => {
            let cfg = load_config(config.as_deref())?;
            let input = SceneInput::load(&scene)?;
            emit_json(&run_scene(&input, &cfg)?, None)
        }
        Command::Eval { pred, out } => eval(&pred, out.as_deref()),
        Command::Batch {
            scenes,
            config,
            out,
            parallel,
        } => {
            let cfg = load_config(config.as_deref())?;
            let report = run_batch_paths(&scene_bases(&scenes)?, &cfg, parallel);
            emit_json(&report, out.as_deref())
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
