//! Trajectory and segmentation metrics: rigid-alignment ATE, mean IoU, and
//! instance-level average precision at IoU 0.5.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{Point3, Pose};
use crate::segmentation::FrameSegmentation;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fewer than 3 timestamp-associated pose pairs")]
    InsufficientOverlap,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("timestamps are not strictly increasing at sample {0}")]
    NonMonotonicTimestamps(usize),
}

/// Timestamped pose sequence.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(EvalError::NonMonotonicTimestamps(i + 1));
            }
        }
        Ok(Self { samples })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn push(&mut self, timestamp: f64, pose: Pose) -> Result<(), EvalError> {
        if let Some((last, _)) = self.samples.last() {
            if timestamp <= *last {
                return Err(EvalError::NonMonotonicTimestamps(self.samples.len()));
            }
        }
        self.samples.push((timestamp, pose));
        Ok(())
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Association window for nearest-timestamp pairing, seconds.
const ASSOCIATION_WINDOW: f64 = 0.02;

/// Camera-center pairs associated by nearest timestamp within the window.
fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(Point3, Point3)> {
    let mut pairs = Vec::new();
    let gt_samples = gt.samples();
    if gt_samples.is_empty() {
        return pairs;
    }
    for (t, pose) in est.samples() {
        // Binary search for the nearest ground-truth timestamp.
        let idx = gt_samples.partition_point(|(gt_t, _)| gt_t < t);
        let mut best: Option<(f64, usize)> = None;
        for cand in [idx.wrapping_sub(1), idx] {
            if cand < gt_samples.len() {
                let dt = (gt_samples[cand].0 - t).abs();
                if best.is_none_or(|(bd, _)| dt < bd) {
                    best = Some((dt, cand));
                }
            }
        }
        if let Some((dt, gi)) = best {
            if dt <= ASSOCIATION_WINDOW {
                pairs.push((pose.center(), gt_samples[gi].1.center()));
            }
        }
    }
    pairs
}

/// Least-squares rigid transform (rotation + translation, no scale) mapping
/// estimated camera centers onto ground-truth centers.
pub fn align_umeyama(est: &Trajectory, gt: &Trajectory) -> Result<Pose, EvalError> {
    let pairs = associate(est, gt);
    if pairs.len() < 3 {
        return Err(EvalError::InsufficientOverlap);
    }
    let n = pairs.len() as f64;
    let mean_e: Vector3<f64> = pairs.iter().map(|(e, _)| e.coords).sum::<Vector3<f64>>() / n;
    let mean_g: Vector3<f64> = pairs.iter().map(|(_, g)| g.coords).sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    for (e, g) in &pairs {
        cross += (e.coords - mean_e) * (g.coords - mean_g).transpose();
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = v_t.transpose() * d * u.transpose();
    let translation = mean_g - rotation * mean_e;
    Ok(Pose::new(rotation, translation).expect("SVD produces an orthonormal rotation"))
}

/// ATE of one run: RMSE of center residuals after rigid alignment, plus the
/// per-frame errors.
#[derive(Clone, Debug)]
pub struct AteReport {
    /// RMSE of the reported run (for aggregates, the median run).
    pub rmse: f64,
    /// Median of per-run RMSEs (equals `rmse` for a single run).
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Per-frame errors of the reported run, meters.
    pub per_frame: Vec<f64>,
}

fn single_run_errors(est: &Trajectory, gt: &Trajectory) -> Result<Vec<f64>, EvalError> {
    let alignment = align_umeyama(est, gt)?;
    let pairs = associate(est, gt);
    Ok(pairs
        .iter()
        .map(|(e, g)| (alignment.apply(e) - g).norm())
        .collect())
}

fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// ATE of one estimated trajectory against ground truth.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<AteReport, EvalError> {
    let errors = single_run_errors(est, gt)?;
    let value = rmse(&errors);
    Ok(AteReport {
        rmse: value,
        median: value,
        min: value,
        max: value,
        per_frame: errors,
    })
}

/// ATE aggregated over repeated runs: median/min/max of per-run RMSEs; the
/// reported per-frame errors come from the median run.
pub fn ate_multi(runs: &[Trajectory], gt: &Trajectory) -> Result<AteReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::InsufficientOverlap);
    }
    let mut per_run: Vec<(f64, Vec<f64>)> = Vec::with_capacity(runs.len());
    for est in runs {
        let errors = single_run_errors(est, gt)?;
        per_run.push((rmse(&errors), errors));
    }
    let mut order: Vec<usize> = (0..per_run.len()).collect();
    order.sort_by(|&a, &b| per_run[a].0.total_cmp(&per_run[b].0));
    let median_idx = order[order.len() / 2];
    Ok(AteReport {
        rmse: per_run[median_idx].0,
        median: per_run[median_idx].0,
        min: per_run[order[0]].0,
        max: per_run[*order.last().unwrap()].0,
        per_frame: per_run[median_idx].1.clone(),
    })
}

/// Segmentation quality over a sequence.
#[derive(Clone, Debug)]
pub struct SegReport {
    pub miou: f64,
    pub map50: f64,
    /// Per-class (IoU, AP) for classes present in the ground truth.
    pub per_class: BTreeMap<u32, (f64, f64)>,
}

fn check_dims(
    pred: &[FrameSegmentation],
    gt: &[FrameSegmentation],
) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::DimensionMismatch(format!(
            "{} predicted frames vs {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.width != g.width || p.height != g.height {
            return Err(EvalError::DimensionMismatch(format!(
                "frame {}: {}x{} vs {}x{}",
                g.frame_index, p.width, p.height, g.width, g.height
            )));
        }
    }
    Ok(())
}

/// Mean IoU over classes present in the ground truth, with intersections and
/// unions accumulated across all frames per class.
pub fn miou(pred: &[FrameSegmentation], gt: &[FrameSegmentation]) -> Result<f64, EvalError> {
    Ok(miou_per_class(pred, gt)?
        .values()
        .sum::<f64>()
        / miou_per_class(pred, gt)?.len().max(1) as f64)
}

/// Per-class IoU across the sequence.
pub fn miou_per_class(
    pred: &[FrameSegmentation],
    gt: &[FrameSegmentation],
) -> Result<BTreeMap<u32, f64>, EvalError> {
    check_dims(pred, gt)?;
    // class -> (intersection, union) accumulated over frames.
    let mut acc: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (p_frame, g_frame) in pred.iter().zip(gt) {
        let classes: std::collections::BTreeSet<u32> =
            g_frame.regions().iter().map(|r| r.class_id).collect();
        let mut all_classes = classes.clone();
        all_classes.extend(p_frame.regions().iter().map(|r| r.class_id));
        for class in all_classes {
            let p_mask = class_mask(p_frame, class);
            let g_mask = class_mask(g_frame, class);
            let (i, u) = match (&p_mask, &g_mask) {
                (Some(p), Some(g)) => (p.intersection_area(g), p.union_area(g)),
                (Some(p), None) => (0, p.area()),
                (None, Some(g)) => (0, g.area()),
                (None, None) => (0, 0),
            };
            let e = acc.entry(class).or_insert((0, 0));
            e.0 += i;
            e.1 += u;
        }
    }
    // Score only classes that exist in the ground truth.
    let gt_classes: std::collections::BTreeSet<u32> = gt
        .iter()
        .flat_map(|f| f.regions().iter().map(|r| r.class_id))
        .collect();
    Ok(gt_classes
        .into_iter()
        .map(|c| {
            let (i, u) = acc.get(&c).copied().unwrap_or((0, 0));
            (c, if u == 0 { 0.0 } else { i as f64 / u as f64 })
        })
        .collect())
}

fn class_mask(frame: &FrameSegmentation, class: u32) -> Option<crate::segmentation::MaskGrid> {
    let mut out: Option<crate::segmentation::MaskGrid> = None;
    for r in frame.regions().iter().filter(|r| r.class_id == class) {
        match &mut out {
            None => out = Some(r.mask.clone()),
            Some(m) => m.union_with(&r.mask),
        }
    }
    out
}

/// Confidence assigned to predicted regions: refined regions are trusted
/// fully, untouched coarse regions slightly less.
fn region_confidence(refined: bool) -> f64 {
    if refined {
        1.0
    } else {
        0.9
    }
}

/// Instance-level mean average precision at IoU 0.5: predictions are greedily
/// matched to same-frame, same-class ground-truth instances in descending
/// confidence order, and the all-point interpolated AP is averaged over
/// classes present in the ground truth.
pub fn map50(pred: &[FrameSegmentation], gt: &[FrameSegmentation]) -> Result<f64, EvalError> {
    let per_class = map50_per_class(pred, gt)?;
    Ok(per_class.values().sum::<f64>() / per_class.len().max(1) as f64)
}

/// Per-class AP at IoU 0.5.
pub fn map50_per_class(
    pred: &[FrameSegmentation],
    gt: &[FrameSegmentation],
) -> Result<BTreeMap<u32, f64>, EvalError> {
    check_dims(pred, gt)?;
    let gt_classes: std::collections::BTreeSet<u32> = gt
        .iter()
        .flat_map(|f| f.regions().iter().map(|r| r.class_id))
        .collect();
    let mut out = BTreeMap::new();
    for &class in &gt_classes {
        // (confidence, frame, instance) for every prediction of the class.
        let mut detections: Vec<(f64, usize, u32)> = Vec::new();
        let mut total_gt = 0usize;
        for (fi, (p_frame, g_frame)) in pred.iter().zip(gt).enumerate() {
            total_gt += g_frame
                .regions()
                .iter()
                .filter(|r| r.class_id == class)
                .count();
            for r in p_frame.regions().iter().filter(|r| r.class_id == class) {
                detections.push((region_confidence(r.refined), fi, r.instance_id));
            }
        }
        if total_gt == 0 {
            continue;
        }
        // Descending confidence, deterministic ties by frame then id.
        detections.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut matched: std::collections::BTreeSet<(usize, u32)> = std::collections::BTreeSet::new();
        let mut tp_flags = Vec::with_capacity(detections.len());
        for (_, fi, iid) in &detections {
            let p_region = pred[*fi].region(*iid).expect("detection region exists");
            // Best unmatched ground-truth instance by IoU.
            let mut best: Option<(f64, u32)> = None;
            for g in gt[*fi].regions().iter().filter(|r| r.class_id == class) {
                if matched.contains(&(*fi, g.instance_id)) {
                    continue;
                }
                let inter = p_region.mask.intersection_area(&g.mask);
                let union = p_region.mask.union_area(&g.mask);
                let iou = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
                if best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, g.instance_id));
                }
            }
            match best {
                Some((iou, gid)) if iou >= 0.5 => {
                    matched.insert((*fi, gid));
                    tp_flags.push(true);
                }
                _ => tp_flags.push(false),
            }
        }
        // All-point interpolated AP.
        let mut ap = 0.0;
        let mut tp = 0usize;
        let mut precisions = Vec::with_capacity(tp_flags.len());
        for (k, &is_tp) in tp_flags.iter().enumerate() {
            if is_tp {
                tp += 1;
            }
            precisions.push(tp as f64 / (k + 1) as f64);
        }
        // Interpolate: precision at each recall level is the max precision at
        // any higher-rank cut.
        for k in (0..precisions.len().saturating_sub(1)).rev() {
            precisions[k] = precisions[k].max(precisions[k + 1]);
        }
        let mut prev_recall = 0.0;
        let mut tp2 = 0usize;
        for (k, &is_tp) in tp_flags.iter().enumerate() {
            if is_tp {
                tp2 += 1;
                let recall = tp2 as f64 / total_gt as f64;
                ap += (recall - prev_recall) * precisions[k];
                prev_recall = recall;
            }
        }
        out.insert(class, ap);
    }
    Ok(out)
}

/// Convenience wrapper producing the full segmentation report.
pub fn seg_report(
    pred: &[FrameSegmentation],
    gt: &[FrameSegmentation],
) -> Result<SegReport, EvalError> {
    let ious = miou_per_class(pred, gt)?;
    let aps = map50_per_class(pred, gt)?;
    let miou = ious.values().sum::<f64>() / ious.len().max(1) as f64;
    let map50 = aps.values().sum::<f64>() / aps.len().max(1) as f64;
    let per_class = ious
        .iter()
        .map(|(c, iou)| (*c, (*iou, aps.get(c).copied().unwrap_or(0.0))))
        .collect();
    Ok(SegReport {
        miou,
        map50,
        per_class,
    })
}
