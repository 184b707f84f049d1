use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use seglam::config::ConfigFragment;
use seglam::dataset::{
    read_mask, read_trajectory, write_dataset, write_mask, write_trajectory, DatasetReader,
};
use seglam::evaluation::{ate, seg_report};
use seglam::mapping::{load_map_points, save_map_points};
use seglam::pipeline::{
    ate_report_kv, run_experiment, run_pipeline, run_relocalization, run_two_pass_experiment,
    seg_report_kv, write_experiment_reports, CorruptionParams, Mode, PipelineParams,
};
use seglam::segmentation::FrameSegmentation;
use seglam::simulator::{self, SceneSpec};

#[derive(Parser)]
#[command(
    name = "seglam",
    about = "RGB-D localization and instance-segmentation co-refinement pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory from a scene spec.
    Simulate(SimulateArgs),
    /// Track a dataset: trajectory, refined masks, and maps.
    Track(TrackArgs),
    /// Relocalize a dataset against a saved map file.
    Relocalize(RelocalizeArgs),
    /// Evaluate trajectories and/or mask directories.
    Evaluate(EvaluateArgs),
    /// Repeated-run experiment over a scene spec.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene spec TOML file.
    #[arg(long)]
    scene: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Generate the second pass (relocated objects, offset trajectory).
    #[arg(long)]
    second_pass: bool,
}

/// Threshold and pipeline knobs; flags override config files.
#[derive(Args, Clone)]
struct ParamArgs {
    /// Extra key=value config file applied over the dataset camera.cfg.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    match_dist_3d: Option<f64>,
    #[arg(long)]
    moving_fraction: Option<f64>,
    #[arg(long)]
    huber_delta: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    convergence_tol: Option<f64>,
    #[arg(long)]
    pixel_match_radius: Option<f64>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    match_threshold: Option<f64>,
    #[arg(long)]
    keyframe_interval: Option<usize>,
    #[arg(long)]
    merge_radius: Option<f64>,
    #[arg(long)]
    drop_rate: Option<f64>,
    #[arg(long)]
    dilate_rate: Option<f64>,
    #[arg(long)]
    corruption_seed: Option<u64>,
}

impl ParamArgs {
    /// Folds the flag values into a config fragment (flags win).
    fn as_fragment(&self) -> ConfigFragment {
        let mut frag = ConfigFragment::default();
        let pairs: [(&str, Option<f64>); 14] = [
            ("match_dist_3d", self.match_dist_3d),
            ("moving_fraction", self.moving_fraction),
            ("huber_delta", self.huber_delta),
            ("max_iterations", self.max_iterations.map(|v| v as f64)),
            ("convergence_tol", self.convergence_tol),
            ("pixel_match_radius", self.pixel_match_radius),
            ("w1", self.w1),
            ("w2", self.w2),
            ("match_threshold", self.match_threshold),
            ("keyframe_interval", self.keyframe_interval.map(|v| v as f64)),
            ("merge_radius", self.merge_radius),
            ("drop_rate", self.drop_rate),
            ("dilate_rate", self.dilate_rate),
            ("corruption_seed", self.corruption_seed.map(|v| v as f64)),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                frag.set(key, v);
            }
        }
        frag
    }

    /// Resolves the pipeline parameters: defaults, then `base` (usually the
    /// dataset camera.cfg), then --config, then flags.
    fn resolve(&self, base: Option<&ConfigFragment>, mode: Mode) -> Result<PipelineParams> {
        let mut frag = ConfigFragment::default();
        if let Some(base) = base {
            frag = frag.merged_with(base);
        }
        if let Some(path) = &self.config {
            let user = ConfigFragment::load(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            frag = frag.merged_with(&user);
        }
        frag = frag.merged_with(&self.as_fragment());
        Ok(PipelineParams {
            mode,
            tracking: frag.tracking()?,
            weights: frag.weights()?,
            keyframe_interval: frag.keyframe_interval()?,
            merge_radius: frag.merge_radius()?,
            corruption: CorruptionParams {
                drop_rate: frag.get("drop_rate").unwrap_or(0.0),
                dilate_rate: frag.get("dilate_rate").unwrap_or(0.0),
                seed: frag.get("corruption_seed").unwrap_or(0.0) as u64,
            },
        })
    }
}

#[derive(Args)]
struct TrackArgs {
    /// Dataset directory (from `simulate` or compatible).
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// full | trackonly | baseline
    #[arg(long, default_value = "full")]
    mode: String,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct RelocalizeArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Map file written by `track`.
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated trajectory (TUM rows).
    #[arg(long)]
    est: Option<PathBuf>,
    /// Ground-truth trajectory (TUM rows).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Directory of predicted masks (frame_*_mask.pgm).
    #[arg(long)]
    pred_masks: Option<PathBuf>,
    /// Directory of ground-truth masks.
    #[arg(long)]
    gt_masks: Option<PathBuf>,
    /// Optional report directory; reports always print to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Scene spec TOML file.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// full | trackonly | baseline
    #[arg(long, default_value = "full")]
    mode: String,
    /// Run the two-pass relocalization comparison instead of one-pass runs.
    #[arg(long)]
    two_pass: bool,
    #[command(flatten)]
    params: ParamArgs,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Track(args) => track(args),
        Command::Relocalize(args) => relocalize_cmd(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Experiment(args) => experiment(args),
    }
}

fn load_scene(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scene spec {}", path.display()))?;
    Ok(SceneSpec::from_toml_str(&text)?)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let spec = load_scene(&args.scene)?;
    let bundle = if args.second_pass {
        simulator::second_pass(&spec)?
    } else {
        simulator::generate(&spec)?
    };
    write_dataset(&args.out, &bundle, Some(&spec.to_toml_string()))?;
    println!(
        "wrote {} frames, {} landmarks to {}",
        bundle.frames.len(),
        bundle.landmarks.len(),
        args.out.display()
    );
    Ok(())
}

fn track(args: TrackArgs) -> Result<()> {
    let mode = Mode::parse(&args.mode)?;
    if mode == Mode::SecondPass {
        bail!("use the relocalize subcommand for second-pass runs");
    }
    let reader = DatasetReader::open(&args.dataset)?;
    let base = ConfigFragment::load(&args.dataset.join("camera.cfg"))?;
    let params = args.params.resolve(Some(&base), mode)?;

    let output = run_pipeline(&reader, &params)?;

    std::fs::create_dir_all(&args.out)?;
    write_trajectory(&args.out.join("trajectory.txt"), &output.trajectory)?;
    let mask_dir = args.out.join("masks");
    std::fs::create_dir_all(&mask_dir)?;
    for seg in &output.refined {
        write_mask(&mask_dir, seg)?;
    }
    save_map_points(
        &args.out.join("tracking_map.bin"),
        output.tracking_map.points(),
    )?;
    save_map_points(
        &args.out.join("long_term_map.bin"),
        output.long_term_map.points(),
    )?;
    let lost_text: String = output
        .lost_frames
        .iter()
        .map(|i| format!("{i}\n"))
        .collect();
    std::fs::write(args.out.join("lost_frames.txt"), lost_text)?;

    let t = &output.timings;
    eprintln!(
        "stage timings (total ms): coarse {:.1}, refine {:.1}, judge {:.1}, fine {:.1}, map {:.1}",
        t.coarse_ms, t.refine_ms, t.judge_ms, t.fine_ms, t.map_ms
    );
    println!(
        "tracked {} frames ({} lost), map {} points, long-term {} points",
        output.trajectory.len(),
        output.lost_frames.len(),
        output.tracking_map.len(),
        output.long_term_map.len()
    );
    Ok(())
}

fn relocalize_cmd(args: RelocalizeArgs) -> Result<()> {
    let reader = DatasetReader::open(&args.dataset)?;
    let base = ConfigFragment::load(&args.dataset.join("camera.cfg"))?;
    let params = args.params.resolve(Some(&base), Mode::SecondPass)?;
    let map_points = load_map_points(&args.map)
        .with_context(|| format!("reading map {}", args.map.display()))?;
    let (trajectory, lost) = run_relocalization(&reader, &map_points, &params)?;
    std::fs::create_dir_all(&args.out)?;
    write_trajectory(&args.out.join("trajectory.txt"), &trajectory)?;
    let lost_text: String = lost.iter().map(|i| format!("{i}\n")).collect();
    std::fs::write(args.out.join("lost_frames.txt"), lost_text)?;
    println!(
        "relocalized {} frames ({} lost) against {} map points",
        trajectory.len(),
        lost.len(),
        map_points.len()
    );
    Ok(())
}

fn read_mask_dir(dir: &Path) -> Result<Vec<FrameSegmentation>> {
    let mut out = Vec::new();
    let mut idx = 0usize;
    while dir.join(format!("frame_{idx:06}_mask.pgm")).exists() {
        out.push(read_mask(dir, idx)?);
        idx += 1;
    }
    if out.is_empty() {
        bail!("no mask frames found under {}", dir.display());
    }
    Ok(out)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut report_text = String::new();
    match (&args.est, &args.gt) {
        (Some(est), Some(gt)) => {
            let est_traj = read_trajectory(est)?;
            let gt_traj = read_trajectory(gt)?;
            let report = ate(&est_traj, &gt_traj)?;
            report_text.push_str(&ate_report_kv(&report, "ate"));
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out)?;
                let mut csv = String::from("frame,ate_error\n");
                for (i, e) in report.per_frame.iter().enumerate() {
                    csv.push_str(&format!("{i},{e}\n"));
                }
                std::fs::write(out.join("ate_per_frame.csv"), csv)?;
            }
        }
        (None, None) => {}
        _ => bail!("--est and --gt must be given together"),
    }
    match (&args.pred_masks, &args.gt_masks) {
        (Some(pred), Some(gt)) => {
            let pred_segs = read_mask_dir(pred)?;
            let gt_segs = read_mask_dir(gt)?;
            if pred_segs.len() != gt_segs.len() {
                bail!(
                    "mask frame count mismatch: {} predicted vs {} ground truth",
                    pred_segs.len(),
                    gt_segs.len()
                );
            }
            let report = seg_report(&pred_segs, &gt_segs)?;
            report_text.push_str(&seg_report_kv(&report));
        }
        (None, None) => {}
        _ => bail!("--pred-masks and --gt-masks must be given together"),
    }
    if report_text.is_empty() {
        bail!("nothing to evaluate; pass trajectories and/or mask directories");
    }
    print!("{report_text}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("report.kv"), &report_text)?;
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let spec = load_scene(&args.scene)?;
    let mode = Mode::parse(&args.mode)?;
    let params = args.params.resolve(None, mode)?;
    std::fs::create_dir_all(&args.out)?;
    if args.two_pass {
        let report = run_two_pass_experiment(&spec, &params, args.runs)?;
        let mut kv = String::new();
        kv.push_str(&format!("runs={}\n", report.runs));
        kv.push_str(&ate_report_kv(&report.ate_long_term, "ate_long_term"));
        kv.push_str(&ate_report_kv(&report.ate_tracking, "ate_tracking"));
        kv.push_str(&format!(
            "long_term_pure={}\n",
            if report.long_term_pure { 1 } else { 0 }
        ));
        let mut csv = String::from("run,ate_long_term,ate_tracking\n");
        for (r, ltm, tm) in &report.per_run {
            csv.push_str(&format!("{r},{ltm},{tm}\n"));
        }
        std::fs::write(args.out.join("report.kv"), &kv)?;
        std::fs::write(args.out.join("per_run.csv"), &csv)?;
        print!("{kv}");
    } else {
        let report = run_experiment(&spec, &params, args.runs)?;
        write_experiment_reports(&report, &args.out)?;
        println!(
            "mode {} over {} runs: ATE median {} m (min {}, max {})",
            report.mode.name(),
            report.runs,
            report.ate.median,
            report.ate.min,
            report.ate.max
        );
        if let (Some(refined), Some(input)) = (&report.seg_refined, &report.seg_input) {
            println!(
                "mIoU input {} -> refined {}; mAP50 input {} -> refined {}",
                input.miou, refined.miou, input.map50, refined.map50
            );
        }
    }
    Ok(())
}
