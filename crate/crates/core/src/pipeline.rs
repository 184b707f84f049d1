//! Frame-loop driver: per frame, coarse pose from all features, pose-guided
//! segmentation refinement, motion judgment, fine pose over static features,
//! and keyframe map maintenance. Also the repeated-run experiment harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::config::ConfigError;
use crate::dataset::{DatasetError, DatasetReader};
use crate::evaluation::{ate, AteReport, EvalError, SegReport, Trajectory};
use crate::geometry::{relative_pose, CameraModel, DepthGrid, Point3, Pose};
use crate::mapping::{
    relocalize, update_long_term_map, update_tracking_map, LongTermMap, MapPoint, TrackingMap,
};
use crate::rng::mix_seed;
use crate::segmentation::{
    corrupt, refine, shortlist_moveable, ClassTable, FrameSegmentation, SegmentationError,
    SimilarityWeights,
};
use crate::simulator::{self, GroundTruthBundle, SceneSpec, SimError};
use crate::tracking::{
    classify_points, estimate_pose, fine_track, judge_motion, match_to_map, ClassifiedPoints,
    FrameObservation, TrackingConfig, TrackingError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {index}: {message}")]
    Frame { index: usize, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

fn frame_err(index: usize, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Frame {
        index,
        message: e.to_string(),
    }
}

/// What the frame loop does with segmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Full co-refinement: masks gate tracking, poses repair masks.
    Full,
    /// Mask gating without segmentation refinement.
    TrackOnly,
    /// Segmentation ignored entirely; every feature drives the pose.
    Baseline,
    /// Per-frame relocalization against a previously built map.
    SecondPass,
}

impl Mode {
    pub fn parse(text: &str) -> Result<Mode, PipelineError> {
        match text {
            "full" => Ok(Mode::Full),
            "trackonly" | "track-only" => Ok(Mode::TrackOnly),
            "baseline" => Ok(Mode::Baseline),
            "secondpass" | "second-pass" => Ok(Mode::SecondPass),
            other => Err(PipelineError::Invalid(format!("unknown mode '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::TrackOnly => "trackonly",
            Mode::Baseline => "baseline",
            Mode::SecondPass => "secondpass",
        }
    }
}

/// Synthetic degradation applied to the segmentation source.
#[derive(Clone, Copy, Debug)]
pub struct CorruptionParams {
    pub drop_rate: f64,
    pub dilate_rate: f64,
    pub seed: u64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            drop_rate: 0.0,
            dilate_rate: 0.0,
            seed: 0,
        }
    }
}

impl CorruptionParams {
    pub fn is_active(&self) -> bool {
        self.drop_rate > 0.0 || self.dilate_rate > 0.0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PipelineParams {
    pub mode: Mode,
    pub tracking: TrackingConfig,
    pub weights: SimilarityWeights,
    pub keyframe_interval: usize,
    pub merge_radius: f64,
    pub corruption: CorruptionParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            tracking: TrackingConfig::default(),
            weights: SimilarityWeights::default(),
            keyframe_interval: 5,
            merge_radius: crate::mapping::DEFAULT_MERGE_RADIUS,
            corruption: CorruptionParams::default(),
        }
    }
}

/// Cumulative per-stage wall time, milliseconds. Informational only; never
/// written into reports.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimings {
    pub coarse_ms: f64,
    pub refine_ms: f64,
    pub judge_ms: f64,
    pub fine_ms: f64,
    pub map_ms: f64,
}

/// Source of frames for the pipeline; implementations may read lazily.
pub trait FrameSource {
    fn frame_count(&self) -> usize;
    fn camera(&self) -> &CameraModel;
    fn class_table(&self) -> &ClassTable;
    fn observation(&self, index: usize) -> Result<FrameObservation, PipelineError>;
    fn coarse_segmentation(&self, index: usize) -> Result<FrameSegmentation, PipelineError>;
}

/// In-memory bundle as a frame source.
pub struct BundleSource<'a> {
    pub bundle: &'a GroundTruthBundle,
}

impl FrameSource for BundleSource<'_> {
    fn frame_count(&self) -> usize {
        self.bundle.frames.len()
    }

    fn camera(&self) -> &CameraModel {
        &self.bundle.cam
    }

    fn class_table(&self) -> &ClassTable {
        &self.bundle.class_table
    }

    fn observation(&self, index: usize) -> Result<FrameObservation, PipelineError> {
        Ok(self.bundle.frames[index].observation.clone())
    }

    fn coarse_segmentation(&self, index: usize) -> Result<FrameSegmentation, PipelineError> {
        Ok(self.bundle.frames[index].segmentation.clone())
    }
}

impl FrameSource for DatasetReader {
    fn frame_count(&self) -> usize {
        DatasetReader::frame_count(self)
    }

    fn camera(&self) -> &CameraModel {
        DatasetReader::camera(self)
    }

    fn class_table(&self) -> &ClassTable {
        DatasetReader::class_table(self)
    }

    fn observation(&self, index: usize) -> Result<FrameObservation, PipelineError> {
        Ok(DatasetReader::observation(self, index)?)
    }

    fn coarse_segmentation(&self, index: usize) -> Result<FrameSegmentation, PipelineError> {
        Ok(DatasetReader::segmentation(self, index)?)
    }
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub trajectory: Trajectory,
    /// Final segmentation per frame (refined in Full mode).
    pub refined: Vec<FrameSegmentation>,
    /// Segmentation the pipeline actually consumed (after corruption).
    pub input_segs: Vec<FrameSegmentation>,
    pub tracking_map: TrackingMap,
    pub long_term_map: LongTermMap,
    /// Frames where tracking was lost, excluded from the trajectory.
    pub lost_frames: Vec<usize>,
    pub timings: StageTimings,
}

/// Runs the frame loop over a source. Frame 0 anchors the world frame at the
/// identity pose; a frame whose solve degenerates is marked lost and the
/// loop reinitializes from the next frame.
pub fn run_pipeline(
    source: &dyn FrameSource,
    params: &PipelineParams,
) -> Result<PipelineOutput, PipelineError> {
    if params.mode == Mode::SecondPass {
        return Err(PipelineError::Invalid(
            "second-pass runs need a map; use run_relocalization".into(),
        ));
    }
    params
        .tracking
        .validate()
        .map_err(|e| PipelineError::Invalid(e.to_string()))?;
    let cam = *source.camera();
    let table = source.class_table().clone();
    let n = source.frame_count();

    let mut trajectory = Trajectory::empty();
    let mut refined_out: Vec<FrameSegmentation> = Vec::with_capacity(n);
    let mut input_out: Vec<FrameSegmentation> = Vec::with_capacity(n);
    let mut tracking_map = TrackingMap::new(params.merge_radius);
    let mut long_term_map = LongTermMap::new(params.merge_radius);
    let mut lost_frames = Vec::new();
    let mut timings = StageTimings::default();

    // State carried between frames.
    let mut prev_fine: Option<Pose> = None;
    let mut prev_rel: Option<Pose> = None;
    let mut prev_refined: Option<FrameSegmentation> = None;
    let mut prev_depth: Option<DepthGrid> = None;

    for i in 0..n {
        let obs = source.observation(i)?;
        let mut seg_in = source.coarse_segmentation(i)?;
        if params.corruption.is_active() {
            seg_in = corrupt(
                &seg_in,
                params.corruption.drop_rate,
                params.corruption.dilate_rate,
                mix_seed(params.corruption.seed, i as u64),
            );
        }
        let seg_in = shortlist_moveable(&seg_in, &table).map_err(|e| frame_err(i, e))?;

        if prev_fine.is_none() {
            // World anchor (first frame, or restart after a lost streak when
            // the map is still empty).
            let fine = Pose::identity();
            let cp = classify_for_mode(params.mode, &obs, &seg_in);
            trajectory
                .push(obs.timestamp, fine)
                .map_err(|e| frame_err(i, e))?;
            if i % params.keyframe_interval == 0 {
                let t0 = Instant::now();
                update_tracking_map(&mut tracking_map, &obs, &cp, &fine, &cam);
                update_long_term_map(&mut long_term_map, &tracking_map);
                timings.map_ms += t0.elapsed().as_secs_f64() * 1e3;
            }
            refined_out.push(seg_in.clone());
            input_out.push(seg_in.clone());
            prev_fine = Some(fine);
            prev_rel = None;
            prev_refined = Some(seg_in);
            prev_depth = Some(obs.depth_grid.clone());
            continue;
        }

        let anchor = prev_fine.expect("checked above");
        let init = match prev_rel {
            Some(rel) => rel.compose(&anchor),
            None => anchor,
        };

        // Coarse pose over every valid-depth feature, as the plain tracker
        // would compute it.
        let t0 = Instant::now();
        let all_indices: Vec<usize> = (0..obs.features.len())
            .filter(|&fi| obs.features[fi].raw_depth > 0.0)
            .collect();
        let coarse_result = solve_against_map(
            &obs,
            &all_indices,
            tracking_map.points(),
            &cam,
            &init,
            &params.tracking,
        );
        timings.coarse_ms += t0.elapsed().as_secs_f64() * 1e3;
        let Ok(coarse) = coarse_result else {
            lost_frames.push(i);
            prev_rel = None;
            refined_out.push(seg_in.clone());
            input_out.push(seg_in.clone());
            prev_refined = Some(seg_in);
            prev_depth = Some(obs.depth_grid.clone());
            continue;
        };

        // Refinement of the segmentation through the relative pose.
        let t0 = Instant::now();
        let refined_seg = if params.mode == Mode::Full {
            let rel = relative_pose(&anchor, &coarse);
            let prev_seg = prev_refined.as_ref().expect("previous frame recorded");
            let depth = prev_depth.as_ref().expect("previous frame recorded");
            match refine(prev_seg, depth, &seg_in, &rel, &cam, &params.weights) {
                Ok(r) => shortlist_moveable(&r, &table).map_err(|e| frame_err(i, e))?,
                Err(SegmentationError::DimensionMismatch(m)) => {
                    return Err(frame_err(i, m));
                }
                Err(_) => seg_in.clone(),
            }
        } else {
            seg_in.clone()
        };
        timings.refine_ms += t0.elapsed().as_secs_f64() * 1e3;

        // Classification and motion judgment.
        let t0 = Instant::now();
        let mut cp = classify_for_mode(params.mode, &obs, &refined_seg);
        if params.mode != Mode::Baseline && !tracking_map.is_empty() {
            cp = judge_motion(&cp, &obs, &coarse, tracking_map.points(), &cam, &params.tracking);
        }
        timings.judge_ms += t0.elapsed().as_secs_f64() * 1e3;

        // Fine pose over background and static-instance features.
        let t0 = Instant::now();
        let fine_result = if params.mode == Mode::Baseline {
            Ok(coarse)
        } else {
            fine_track(
                &obs,
                &cp,
                tracking_map.points(),
                &cam,
                &coarse,
                &params.tracking,
            )
        };
        timings.fine_ms += t0.elapsed().as_secs_f64() * 1e3;
        let Ok(fine) = fine_result else {
            lost_frames.push(i);
            prev_rel = None;
            refined_out.push(refined_seg.clone());
            input_out.push(seg_in);
            prev_refined = Some(refined_seg);
            prev_depth = Some(obs.depth_grid.clone());
            continue;
        };

        trajectory
            .push(obs.timestamp, fine)
            .map_err(|e| frame_err(i, e))?;

        if i % params.keyframe_interval == 0 {
            let t0 = Instant::now();
            update_tracking_map(&mut tracking_map, &obs, &cp, &fine, &cam);
            update_long_term_map(&mut long_term_map, &tracking_map);
            timings.map_ms += t0.elapsed().as_secs_f64() * 1e3;
        }

        prev_rel = Some(relative_pose(&anchor, &fine));
        prev_fine = Some(fine);
        refined_out.push(refined_seg.clone());
        input_out.push(seg_in);
        prev_refined = Some(refined_seg);
        prev_depth = Some(obs.depth_grid.clone());
    }

    Ok(PipelineOutput {
        trajectory,
        refined: refined_out,
        input_segs: input_out,
        tracking_map,
        long_term_map,
        lost_frames,
        timings,
    })
}

fn classify_for_mode(
    mode: Mode,
    obs: &FrameObservation,
    seg: &FrameSegmentation,
) -> ClassifiedPoints {
    match mode {
        Mode::Baseline => ClassifiedPoints {
            background: (0..obs.features.len())
                .filter(|&fi| obs.features[fi].raw_depth > 0.0)
                .collect(),
            ..Default::default()
        },
        _ => classify_points(obs, seg),
    }
}

/// Pose of one frame against the current map over the given features.
fn solve_against_map(
    obs: &FrameObservation,
    feature_indices: &[usize],
    map_points: &[MapPoint],
    cam: &CameraModel,
    init: &Pose,
    cfg: &TrackingConfig,
) -> Result<Pose, TrackingError> {
    let matches = match_to_map(obs, feature_indices, map_points, cam, init, cfg);
    let correspondences: Vec<(Point3, crate::geometry::Pixel)> = matches
        .iter()
        .map(|&(fi, mi)| (map_points[mi].position, obs.features[fi].pixel))
        .collect();
    let (pose, _) = estimate_pose(&correspondences, cam, init, cfg)?;
    Ok(pose)
}

/// Relocalizes every frame of a source against a fixed map. Frames that fail
/// are reported as lost.
pub fn run_relocalization(
    source: &dyn FrameSource,
    map_points: &[MapPoint],
    params: &PipelineParams,
) -> Result<(Trajectory, Vec<usize>), PipelineError> {
    let cam = *source.camera();
    let mut trajectory = Trajectory::empty();
    let mut lost = Vec::new();
    for i in 0..source.frame_count() {
        let obs = source.observation(i)?;
        match relocalize(map_points, &obs, &cam, &params.tracking) {
            Ok((pose, _)) => {
                trajectory
                    .push(obs.timestamp, pose)
                    .map_err(|e| frame_err(i, e))?;
            }
            Err(_) => lost.push(i),
        }
    }
    Ok((trajectory, lost))
}

/// Ground-truth trajectory of a bundle.
pub fn bundle_ground_truth(bundle: &GroundTruthBundle) -> Result<Trajectory, PipelineError> {
    let mut gt = Trajectory::empty();
    for frame in &bundle.frames {
        gt.push(frame.observation.timestamp, frame.pose)
            .map_err(|e| frame_err(frame.observation.frame_index, e))?;
    }
    Ok(gt)
}

/// One run of a repeated experiment.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub run: usize,
    pub noise_seed: u64,
    pub corruption_seed: u64,
    pub ate_rmse: f64,
    pub lost_frames: usize,
    pub miou_input: Option<f64>,
    pub miou_refined: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub runs: usize,
    pub ate: AteReport,
    /// Segmentation quality of the pipeline output against perfect masks.
    pub seg_refined: Option<SegReport>,
    /// Segmentation quality of the (corrupted) input against perfect masks.
    pub seg_input: Option<SegReport>,
    pub per_run: Vec<RunRecord>,
}

/// Median/min/max aggregation over per-run ATE reports; the median run's
/// per-frame errors are carried through.
pub fn aggregate_ate(per_run: &[AteReport]) -> AteReport {
    assert!(!per_run.is_empty());
    let mut order: Vec<usize> = (0..per_run.len()).collect();
    order.sort_by(|&a, &b| per_run[a].rmse.total_cmp(&per_run[b].rmse));
    let median = order[order.len() / 2];
    AteReport {
        rmse: per_run[median].rmse,
        median: per_run[median].rmse,
        min: per_run[order[0]].rmse,
        max: per_run[*order.last().unwrap()].rmse,
        per_frame: per_run[median].per_frame.clone(),
    }
}

/// Repeats the pipeline over fresh noise realizations of one scene. Run `r`
/// replays the same geometry with `noise_seed = seed + r` and
/// `corruption seed + r`, mirroring repeated runs over a fixed sequence.
pub fn run_experiment(
    spec: &SceneSpec,
    params: &PipelineParams,
    runs: usize,
) -> Result<ExperimentReport, PipelineError> {
    if runs == 0 {
        return Err(PipelineError::Invalid("runs must be >= 1".into()));
    }
    let mut ate_reports = Vec::with_capacity(runs);
    let mut records = Vec::with_capacity(runs);
    let mut median_candidates: Vec<(Option<SegReport>, Option<SegReport>)> = Vec::new();
    for r in 0..runs {
        let mut run_spec = spec.clone();
        run_spec.noise_seed = spec.noise_seed.wrapping_add(r as u64);
        let mut run_params = *params;
        run_params.corruption.seed = params.corruption.seed.wrapping_add(r as u64);

        let bundle = simulator::generate(&run_spec)?;
        let source = BundleSource { bundle: &bundle };
        let output = run_pipeline(&source, &run_params)?;
        let gt = bundle_ground_truth(&bundle)?;
        let run_ate = ate(&output.trajectory, &gt)?;

        let gt_segs: Vec<FrameSegmentation> = bundle
            .frames
            .iter()
            .map(|f| f.segmentation.clone())
            .collect();
        let (seg_refined, seg_input, miou_refined, miou_input) =
            if params.mode == Mode::Full && params.corruption.is_active() {
                let refined = crate::evaluation::seg_report(&output.refined, &gt_segs)?;
                let input = crate::evaluation::seg_report(&output.input_segs, &gt_segs)?;
                let (mr, mi) = (refined.miou, input.miou);
                (Some(refined), Some(input), Some(mr), Some(mi))
            } else {
                (None, None, None, None)
            };

        records.push(RunRecord {
            run: r,
            noise_seed: run_spec.noise_seed,
            corruption_seed: run_params.corruption.seed,
            ate_rmse: run_ate.rmse,
            lost_frames: output.lost_frames.len(),
            miou_input,
            miou_refined,
        });
        ate_reports.push(run_ate);
        median_candidates.push((seg_refined, seg_input));
    }
    let ate = aggregate_ate(&ate_reports);
    // Segmentation reports from the ATE-median run, for a consistent story.
    let median_idx = records
        .iter()
        .position(|r| r.ate_rmse == ate.median)
        .unwrap_or(0);
    let (seg_refined, seg_input) = median_candidates.swap_remove(median_idx);
    Ok(ExperimentReport {
        mode: params.mode,
        runs,
        ate,
        seg_refined,
        seg_input,
        per_run: records,
    })
}

/// Writes the text, key=value, and CSV report files. Output is a pure
/// function of the report, so identical experiments produce identical bytes.
pub fn write_experiment_reports(
    report: &ExperimentReport,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut kv = String::new();
    let _ = writeln!(kv, "mode={}", report.mode.name());
    let _ = writeln!(kv, "runs={}", report.runs);
    let _ = writeln!(kv, "ate_rmse={}", report.ate.rmse);
    let _ = writeln!(kv, "ate_median={}", report.ate.median);
    let _ = writeln!(kv, "ate_min={}", report.ate.min);
    let _ = writeln!(kv, "ate_max={}", report.ate.max);
    let lost_total: usize = report.per_run.iter().map(|r| r.lost_frames).sum();
    let _ = writeln!(kv, "lost_frames_total={lost_total}");
    if let Some(seg) = &report.seg_refined {
        let _ = writeln!(kv, "miou_refined={}", seg.miou);
        let _ = writeln!(kv, "map50_refined={}", seg.map50);
        for (class, (iou, ap)) in &seg.per_class {
            let _ = writeln!(kv, "class_{class}_iou_refined={iou}");
            let _ = writeln!(kv, "class_{class}_ap_refined={ap}");
        }
    }
    if let Some(seg) = &report.seg_input {
        let _ = writeln!(kv, "miou_input={}", seg.miou);
        let _ = writeln!(kv, "map50_input={}", seg.map50);
    }
    let kv_path = out_dir.join("report.kv");
    std::fs::write(&kv_path, &kv)?;
    written.push(kv_path);

    let mut text = String::new();
    let _ = writeln!(
        text,
        "experiment: mode {} over {} runs",
        report.mode.name(),
        report.runs
    );
    let _ = writeln!(
        text,
        "ATE rmse (median run) {} m, median {} m, min {} m, max {} m",
        report.ate.rmse, report.ate.median, report.ate.min, report.ate.max
    );
    let _ = writeln!(text, "lost frames across runs: {lost_total}");
    if let (Some(refined), Some(input)) = (&report.seg_refined, &report.seg_input) {
        let _ = writeln!(
            text,
            "segmentation mIoU: input {} -> refined {}",
            input.miou, refined.miou
        );
        let _ = writeln!(
            text,
            "segmentation mAP50: input {} -> refined {}",
            input.map50, refined.map50
        );
    }
    let text_path = out_dir.join("report.txt");
    std::fs::write(&text_path, &text)?;
    written.push(text_path);

    let mut csv = String::from("run,noise_seed,corruption_seed,ate_rmse,lost_frames,miou_input,miou_refined\n");
    for r in &report.per_run {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.run,
            r.noise_seed,
            r.corruption_seed,
            r.ate_rmse,
            r.lost_frames,
            r.miou_input.map(|v| v.to_string()).unwrap_or_default(),
            r.miou_refined.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    let csv_path = out_dir.join("per_run.csv");
    std::fs::write(&csv_path, &csv)?;
    written.push(csv_path);

    let mut frame_csv = String::from("frame,ate_error\n");
    for (i, e) in report.ate.per_frame.iter().enumerate() {
        let _ = writeln!(frame_csv, "{i},{e}");
    }
    let frame_csv_path = out_dir.join("ate_per_frame.csv");
    std::fs::write(&frame_csv_path, &frame_csv)?;
    written.push(frame_csv_path);

    Ok(written)
}

/// Relocalization comparison over two passes of one scene: the second pass is
/// solved against the first pass's long-term map and against its full
/// tracking map.
#[derive(Clone, Debug)]
pub struct TwoPassReport {
    pub runs: usize,
    pub ate_long_term: AteReport,
    pub ate_tracking: AteReport,
    /// (run, long-term rmse, tracking rmse)
    pub per_run: Vec<(usize, f64, f64)>,
    /// Long-term map purity observed on every run.
    pub long_term_pure: bool,
}

pub fn run_two_pass_experiment(
    spec: &SceneSpec,
    params: &PipelineParams,
    runs: usize,
) -> Result<TwoPassReport, PipelineError> {
    if runs == 0 {
        return Err(PipelineError::Invalid("runs must be >= 1".into()));
    }
    let mut ltm_reports = Vec::new();
    let mut tm_reports = Vec::new();
    let mut per_run = Vec::new();
    let mut pure = true;
    for r in 0..runs {
        let mut run_spec = spec.clone();
        run_spec.noise_seed = spec.noise_seed.wrapping_add(r as u64);
        let bundle1 = simulator::generate(&run_spec)?;
        let source1 = BundleSource { bundle: &bundle1 };
        let output = run_pipeline(&source1, params)?;
        pure &= output.long_term_map.is_pure();

        let bundle2 = simulator::second_pass(&run_spec)?;
        let source2 = BundleSource { bundle: &bundle2 };
        let gt2 = bundle_ground_truth(&bundle2)?;

        let (traj_ltm, _) =
            run_relocalization(&source2, output.long_term_map.points(), params)?;
        let (traj_tm, _) = run_relocalization(&source2, output.tracking_map.points(), params)?;
        let ate_ltm = ate(&traj_ltm, &gt2)?;
        let ate_tm = ate(&traj_tm, &gt2)?;
        per_run.push((r, ate_ltm.rmse, ate_tm.rmse));
        ltm_reports.push(ate_ltm);
        tm_reports.push(ate_tm);
    }
    Ok(TwoPassReport {
        runs,
        ate_long_term: aggregate_ate(&ltm_reports),
        ate_tracking: aggregate_ate(&tm_reports),
        per_run,
        long_term_pure: pure,
    })
}

/// Key=value dump of an ATE report, used by the evaluate subcommand.
pub fn ate_report_kv(report: &AteReport, label: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{label}_rmse={}", report.rmse);
    let _ = writeln!(out, "{label}_median={}", report.median);
    let _ = writeln!(out, "{label}_min={}", report.min);
    let _ = writeln!(out, "{label}_max={}", report.max);
    out
}

/// Key=value dump of a segmentation report.
pub fn seg_report_kv(report: &SegReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "miou={}", report.miou);
    let _ = writeln!(out, "map50={}", report.map50);
    for (class, (iou, ap)) in &report.per_class {
        let _ = writeln!(out, "class_{class}_iou={iou}");
        let _ = writeln!(out, "class_{class}_ap={ap}");
    }
    out
}

/// Per-class table used in human-readable reports.
pub fn seg_report_table(report: &SegReport) -> BTreeMap<u32, (f64, f64)> {
    report.per_class.clone()
}
