use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use curbsight::appearance::{hog, predict, train, LinearModel, MODEL_HEADER};
use curbsight::config::{Config, ConfigError};
use curbsight::edges::{extract_lines_detailed, overlay_lines, write_debug};
use curbsight::eval::{evaluate_run, write_bins_csv, write_boxplot, write_report_json, PARAMS};
use curbsight::geometry::{CurbEdge, Csr};
use curbsight::pipeline::{track_frames, FrameDetection};
use curbsight::raster::{load_pgm, save_pgm};
use curbsight::synth::{
    make_training_corpus, read_corpus, read_ground_truth, render_sequence, render_trajectory, write_corpus,
    write_ground_truth,
};
use curbsight::template::format_candidates;
use curbsight::tracker::{read_track_log, write_track_log, Mode, StepOutput};
use curbsight::PIPELINE_VERSION;

/// Largest accepted closed-form row deviation, px.
const REMAP_BOUND: f64 = 2e-3;
/// Largest accepted remap round-trip error, px.
const ROUND_TRIP_BOUND: f64 = 1e-9;
const ROUND_TRIP_GRID: usize = 100;

fn version() -> &'static str {
    static V: OnceLock<String> = OnceLock::new();
    V.get_or_init(|| format!("{PIPELINE_VERSION} (model format \"{MODEL_HEADER}\")"))
}

#[derive(Parser)]
#[command(name = "curbsight", version = version(), about = "Curb detection and tracking on forward-view frames")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set tracker.window=9`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic approach sequence with ground truth, or a training corpus.
    Render {
        #[arg(long)]
        out: PathBuf,
        /// Render the road without a curb.
        #[arg(long)]
        no_curb: bool,
        /// Write a labeled corpus from this many scenes instead of a sequence.
        #[arg(long, value_name = "SCENES")]
        corpus: Option<usize>,
    },
    /// Train the window classifier on a corpus directory.
    Train {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect curb candidates in one frame over the whole detection domain.
    Detect {
        frame: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Candidate dump; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frame with the accepted candidates' edges drawn in.
        #[arg(long)]
        annotate: Option<PathBuf>,
        /// Directory for the warped region, edge map and line overlays.
        #[arg(long)]
        debug_dir: Option<PathBuf>,
    },
    /// Track a curb through the frames of a directory, in file-name order.
    Track {
        frames: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a track log against ground truth.
    Evaluate {
        track_log: PathBuf,
        ground_truth: PathBuf,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the remap approximation bound and round trip.
    RemapCheck,
}

enum Failure {
    Config(anyhow::Error),
    Io(anyhow::Error),
    Check(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => Failure::Io(e.into()),
            _ => Failure::Config(e.into()),
        }
    }
}

trait IoContext<T> {
    fn io(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> IoContext<T> for Result<T, E> {
    fn io(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::Io(e.into().context(what())))
    }
}

fn meta(cfg: &Config) -> String {
    format!("curbsight {PIPELINE_VERSION} seed {}", cfg.seed)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).io(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).io(|| format!("creating {}", path.display()))?))
}

fn load_model(cfg: &Config, arg: Option<&Path>) -> Result<Option<LinearModel>, Failure> {
    match arg.or(cfg.model.as_deref()) {
        Some(p) => Ok(Some(LinearModel::load(p).io(|| format!("loading model {}", p.display()))?)),
        None => Ok(None),
    }
}

fn write_run_config(dir: &Path, cfg: &Config) -> Result<(), Failure> {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("# {}\n{}", meta(cfg), cfg.to_toml())).io(|| format!("writing {}", path.display()))
}

fn cmd_render(cfg: &Config, out: &Path, no_curb: bool, corpus: Option<usize>) -> Result<(), Failure> {
    let cdd = cfg.cdd()?;
    std::fs::create_dir_all(out).io(|| format!("creating {}", out.display()))?;
    if let Some(n) = corpus {
        let patches = make_training_corpus(n, &cfg.corpus, &cfg.rig, &cdd, &cfg.remap()?, &cfg.appearance, cfg.seed)
            .map_err(|e| Failure::Config(e.into()))?;
        write_corpus(out, &patches).io(|| format!("writing corpus to {}", out.display()))?;
        write_run_config(out, cfg)?;
        let pos = patches.iter().filter(|p| p.label > 0).count();
        println!("{} patches ({pos} positive) from {n} scenes", patches.len());
        return Ok(());
    }
    let photo = cfg.render.photometry()?;
    let traj = &cfg.render.trajectory;
    let frames = if no_curb {
        render_sequence(&vec![None; traj.frame_count()], &cfg.rig, &cdd, &photo, cfg.seed)
    } else {
        render_trajectory(traj, &cfg.rig, &cdd, &photo, cfg.seed)
    }
    .map_err(|e| Failure::Config(e.into()))?;
    for (img, rec) in &frames {
        let path = out.join(format!("frame_{:05}.pgm", rec.frame));
        save_pgm(&path, img, &[format!("{} frame {}", meta(cfg), rec.frame)]).io(|| format!("writing {}", path.display()))?;
    }
    let gt_path = out.join("gt.csv");
    let mut w = create(&gt_path)?;
    writeln!(w, "# {}", meta(cfg)).io(|| format!("writing {}", gt_path.display()))?;
    let records: Vec<_> = frames.into_iter().map(|(_, r)| r).collect();
    write_ground_truth(&mut w, &records).io(|| format!("writing {}", gt_path.display()))?;
    w.flush().io(|| format!("writing {}", gt_path.display()))?;
    write_run_config(out, cfg)?;
    println!("{} frames written to {}", records.len(), out.display());
    Ok(())
}

fn cmd_train(cfg: &Config, corpus: &Path, out: &Path) -> Result<(), Failure> {
    let patches = read_corpus(corpus).io(|| format!("reading corpus {}", corpus.display()))?;
    let (pos, neg): (Vec<_>, Vec<_>) = patches.iter().partition(|p| p.label > 0);
    let pos: Vec<_> = pos.iter().map(|p| hog(&p.patch)).collect();
    let neg: Vec<_> = neg.iter().map(|p| hog(&p.patch)).collect();
    let (model, report) = train(&pos, &neg, &cfg.appearance).map_err(|e| Failure::Config(e.into()))?;
    let label = |x: &Vec<f64>| predict(&model, x).map(|(_, l)| l).unwrap_or(0);
    let hits = pos.iter().filter(|x| label(x) > 0).count() + neg.iter().filter(|x| label(x) < 0).count();
    model.save(out).io(|| format!("writing model {}", out.display()))?;
    println!(
        "trained on {} positive and {} negative windows in {} epochs, training accuracy {:.4}",
        pos.len(),
        neg.len(),
        report.epochs,
        hits as f64 / (pos.len() + neg.len()) as f64
    );
    Ok(())
}

fn cmd_detect(
    cfg: &Config,
    frame: &Path,
    model: Option<&Path>,
    out: Option<&Path>,
    annotate: Option<&Path>,
    debug_dir: Option<&Path>,
) -> Result<(), Failure> {
    let detector = cfg.detector(load_model(cfg, model)?)?;
    let img = load_pgm(frame).io(|| format!("reading {}", frame.display()))?;
    if img.width() != cfg.rig.width as usize || img.height() != cfg.rig.height as usize {
        return Err(Failure::Io(anyhow!(
            "{} is {}x{}, the rig expects {}x{}",
            frame.display(),
            img.width(),
            img.height(),
            cfg.rig.width,
            cfg.rig.height
        )));
    }
    let csr = Csr::full(&detector.cdd);
    if let Some(dir) = debug_dir {
        match extract_lines_detailed(&img, &csr, &detector.remap, &detector.cdd, &detector.warp, &detector.lines) {
            Ok(ex) => write_debug(dir, &img, &ex).io(|| format!("writing {}", dir.display()))?,
            Err(e) => log::warn!("no debug output: {e}"),
        }
    }
    let detection = detector.detect(&img, &csr).unwrap_or_else(|e| {
        log::info!("no lines: {e}");
        FrameDetection::default()
    });
    let mut dump = format!("# {}\n# kind\tD_cm\ttheta_deg\tH_cm\tE_cm\tresidual_px\n", meta(cfg));
    dump.push_str(&format_candidates(&detection.accepted));
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(dump.as_bytes()).and_then(|_| w.flush()).io(|| format!("writing {}", p.display()))?;
        }
        None => print!("{dump}"),
    }
    if let Some(p) = annotate {
        let lines = detection
            .accepted
            .iter()
            .flat_map(|c| [CurbEdge::Base, CurbEdge::TopFront, CurbEdge::TopRear].map(|e| c.state.edge_line(e, &cfg.rig)))
            .filter_map(Result::ok);
        save_pgm(p, &overlay_lines(&img, lines), &[meta(cfg)]).io(|| format!("writing {}", p.display()))?;
    }
    log::info!("{} lines, {} candidates, {} accepted", detection.lines.len(), detection.candidates.len(), detection.accepted.len());
    Ok(())
}

fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .io(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn cmd_track(cfg: &Config, frames: &Path, model: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let detector = cfg.detector(load_model(cfg, model)?)?;
    let paths = frame_paths(frames)?;
    let mut failure = None;
    let images = paths.iter().map_while(|p| match load_pgm(p) {
        Ok(img) => Some(img),
        Err(e) => {
            failure = Some(anyhow::Error::from(e).context(format!("reading {}", p.display())));
            None
        }
    });
    let tracked = track_frames(&detector, &cfg.tracker, images);
    if let Some(e) = failure {
        return Err(Failure::Io(e));
    }
    let steps: Vec<StepOutput> = tracked.into_iter().map(|f| f.step).collect();
    let mut w = create(out)?;
    writeln!(w, "# {}", meta(cfg)).io(|| format!("writing {}", out.display()))?;
    write_track_log(&mut w, &steps).io(|| format!("writing {}", out.display()))?;
    w.flush().io(|| format!("writing {}", out.display()))?;
    let tracking = steps.iter().filter(|s| s.mode == Mode::Tracking).count();
    println!("{} frames, {tracking} in tracking mode", steps.len());
    Ok(())
}

fn cmd_evaluate(cfg: &Config, log_path: &Path, gt_path: &Path, out: &Path) -> Result<(), Failure> {
    let rows = read_track_log(File::open(log_path).io(|| format!("opening {}", log_path.display()))?)
        .io(|| format!("reading {}", log_path.display()))?;
    let gt = read_ground_truth(File::open(gt_path).io(|| format!("opening {}", gt_path.display()))?)
        .io(|| format!("reading {}", gt_path.display()))?;
    let cdd = cfg.cdd()?;
    let (report, _) = evaluate_run(&rows, &gt, cdd.d_min, cdd.d_max, &cfg.eval, cfg.seed)
        .map_err(|e| Failure::Io(anyhow::Error::from(e).context("pairing track log with ground truth")))?;
    std::fs::create_dir_all(out).io(|| format!("creating {}", out.display()))?;
    write_report_json(&out.join("report.json"), &report).io(|| "writing report.json".into())?;
    let mut w = create(&out.join("bins.csv"))?;
    write_bins_csv(&mut w, &report.bins).io(|| "writing bins.csv".into())?;
    w.flush().io(|| "writing bins.csv".into())?;
    for (k, name) in PARAMS.iter().enumerate() {
        let mut w = create(&out.join(format!("boxplot_{name}.dat")))?;
        write_boxplot(&mut w, &report.bins, k).and_then(|_| w.flush()).io(|| format!("writing boxplot_{name}.dat"))?;
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"));
    println!(
        "frames {} tracked {} accuracy {} F1 {:.4} MAE D {} cm theta {} rad H {} cm E {} cm",
        report.frames,
        report.tracked_frames,
        fmt(report.accuracy),
        report.f1,
        fmt(report.mae[0]),
        fmt(report.mae[1]),
        fmt(report.mae[2]),
        fmt(report.mae[3])
    );
    Ok(())
}

fn cmd_remap_check(cfg: &Config) -> Result<(), Failure> {
    let remap = cfg.remap()?;
    let (dev, row) = remap.approximation_error();
    let rt = remap.round_trip_error(ROUND_TRIP_GRID).map_err(|e| Failure::Check(e.to_string()))?;
    println!("reference row {} (y0 = {})", remap.reference_row(), remap.y0);
    println!("max closed-form deviation {dev:.3e} px at row {row} (bound {REMAP_BOUND:.0e})");
    println!("max round-trip error {rt:.3e} px on a {ROUND_TRIP_GRID}x{ROUND_TRIP_GRID} grid (bound {ROUND_TRIP_BOUND:.0e})");
    if dev >= REMAP_BOUND || !(rt <= ROUND_TRIP_BOUND) {
        return Err(Failure::Check("remap check failed".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = Config::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.cmd {
        Cmd::Render { out, no_curb, corpus } => cmd_render(&cfg, out, *no_curb, *corpus),
        Cmd::Train { corpus, out } => cmd_train(&cfg, corpus, out),
        Cmd::Detect { frame, model, out, annotate, debug_dir } => {
            cmd_detect(&cfg, frame, model.as_deref(), out.as_deref(), annotate.as_deref(), debug_dir.as_deref())
        }
        Cmd::Track { frames, model, out } => cmd_track(&cfg, frames, model.as_deref(), out),
        Cmd::Evaluate { track_log, ground_truth, out } => cmd_evaluate(&cfg, track_log, ground_truth, out),
        Cmd::RemapCheck => cmd_remap_check(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
