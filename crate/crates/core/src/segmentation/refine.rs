//! Pose-guided propagation of segmented regions between frames and the
//! region-update workflow that repairs a coarse segmentation with them.

use std::collections::BTreeSet;

use crate::geometry::{back_project, project, CameraModel, DepthGrid, Pixel, Pose};

use super::{find_match, FrameSegmentation, MaskGrid, SegmentationError, SegmentedRegion, SimilarityWeights};

/// A matched current mask covering at least this fraction of its
/// intersection with the projection is treated as agreeing with it and kept.
/// Replacement is reserved for substantial disagreement (a badly oversized
/// mask), not for the pixel-level jitter forward-warping introduces, which
/// would otherwise overwrite correct masks with slightly eroded projections
/// frame after frame.
pub const REPLACE_AGREEMENT_CEILING: f64 = 0.9;

/// Warps a region into the next view: every mask pixel with a valid depth is
/// back-projected, moved through `rel` (previous-camera to current-camera),
/// reprojected, rounded to the nearest pixel and kept if inside the frame.
/// A single 3x3 closing pass fills quantization holes. Pixels with zero
/// depth are skipped.
pub fn project_region(
    region: &SegmentedRegion,
    depth: &DepthGrid,
    cam: &CameraModel,
    rel: &Pose,
) -> Result<SegmentedRegion, SegmentationError> {
    if depth.width() != region.mask.width() || depth.height() != region.mask.height() {
        return Err(SegmentationError::DimensionMismatch(format!(
            "depth grid {}x{} vs mask {}x{}",
            depth.width(),
            depth.height(),
            region.mask.width(),
            region.mask.height()
        )));
    }
    let mut warped = MaskGrid::new(region.mask.width(), region.mask.height());
    let mut any = false;
    for (x, y) in region.mask.iter_pixels() {
        let raw = depth.get(x, y);
        if raw == 0 {
            continue;
        }
        let Ok(p_prev) = back_project(cam, Pixel::new(x as f64, y as f64), raw as f64) else {
            continue;
        };
        let Ok(px) = project(cam, rel, &p_prev) else {
            continue;
        };
        let u = px.u.round();
        let v = px.v.round();
        if u < 0.0 || v < 0.0 || u >= warped.width() as f64 || v >= warped.height() as f64 {
            continue;
        }
        warped.set(u as u32, v as u32);
        any = true;
    }
    if !any {
        return Err(SegmentationError::EmptyProjection);
    }
    let mut out = region.clone();
    out.mask = warped.close3();
    Ok(out)
}

/// Updates the current frame's coarse segmentation using the previous
/// frame's refined regions projected through the relative pose.
///
/// For each projected region, in ascending previous instance id:
/// - a matched current region is replaced by the projection when the
///   projection covers a larger fraction of the intersection
///   (`|I|/|cur| < |I|/|proj|`) and the current mask genuinely disagrees
///   with it (coverage below [`REPLACE_AGREEMENT_CEILING`]); identity stays
///   with the current frame's region;
/// - an unmatched projection is added as a new region while the previous
///   frame had more regions than the result currently holds.
///
/// Each current region is consumed by at most one projection. Overlaps
/// introduced by replacement or addition are resolved by assigning each
/// contested pixel to the region with the nearest barycenter.
pub fn refine(
    prev: &FrameSegmentation,
    prev_depth: &DepthGrid,
    cur_coarse: &FrameSegmentation,
    rel: &Pose,
    cam: &CameraModel,
    w: &SimilarityWeights,
) -> Result<FrameSegmentation, SegmentationError> {
    if prev.width != cur_coarse.width || prev.height != cur_coarse.height {
        return Err(SegmentationError::DimensionMismatch(format!(
            "previous frame {}x{} vs current {}x{}",
            prev.width, prev.height, cur_coarse.width, cur_coarse.height
        )));
    }
    if prev_depth.width() != prev.width || prev_depth.height() != prev.height {
        return Err(SegmentationError::DimensionMismatch(format!(
            "depth grid {}x{} vs frame {}x{}",
            prev_depth.width(),
            prev_depth.height(),
            prev.width,
            prev.height
        )));
    }

    let mut result: Vec<SegmentedRegion> = cur_coarse.regions().to_vec();
    // Indices into `result` of coarse regions still available for matching.
    let n_coarse = result.len();
    let mut consumed: BTreeSet<usize> = BTreeSet::new();
    let mut next_id = result
        .iter()
        .chain(prev.regions())
        .map(|r| r.instance_id + 1)
        .max()
        .unwrap_or(0);

    let mut prev_order: Vec<&SegmentedRegion> = prev.regions().iter().collect();
    prev_order.sort_by_key(|r| r.instance_id);

    for prev_region in prev_order {
        let Ok(projected) = project_region(prev_region, prev_depth, cam, rel) else {
            // The region left the view; nothing to propagate.
            continue;
        };
        let available: Vec<SegmentedRegion> = (0..n_coarse)
            .filter(|i| !consumed.contains(i))
            .map(|i| result[i].clone())
            .collect();
        match find_match(&projected, &available, w) {
            Some((matched, _score)) => {
                let matched_id = matched.instance_id;
                let idx = (0..n_coarse)
                    .find(|&i| result[i].instance_id == matched_id)
                    .expect("matched region came from result");
                consumed.insert(idx);
                let cur = &result[idx];
                let inter = cur.mask.intersection_area(&projected.mask) as f64;
                let ratio_cur = inter / cur.area() as f64;
                let ratio_proj = inter / projected.area() as f64;
                if ratio_cur < ratio_proj && ratio_cur < REPLACE_AGREEMENT_CEILING {
                    // The projection explains the overlap better and the
                    // current mask substantially disagrees with it. Take the
                    // projection, salvaging current pixels adjacent to it:
                    // far spill is stripped, while a projection that lost
                    // boundary pixels in the warp regrows toward the live
                    // mask instead of shrinking it frame over frame.
                    let mut repaired = projected.mask.clone();
                    let salvage = cur.mask.intersection(&projected.mask.dilate3());
                    repaired.union_with(&salvage);
                    result[idx].mask = repaired;
                    result[idx].refined = true;
                }
            }
            None => {
                if prev.regions().len() > result.len() {
                    let mut added = projected;
                    added.instance_id = next_id;
                    next_id += 1;
                    added.refined = true;
                    result.push(added);
                }
            }
        }
    }

    resolve_overlaps(&mut result);
    result.retain(|r| !r.mask.is_empty());
    FrameSegmentation::new(
        cur_coarse.frame_index,
        cur_coarse.width,
        cur_coarse.height,
        result,
    )
}

/// Assigns every pixel claimed by more than one region to the region whose
/// barycenter is nearest (ties to the lowest instance id).
fn resolve_overlaps(regions: &mut [SegmentedRegion]) {
    if regions.len() < 2 {
        return;
    }
    let centers: Vec<Option<(f64, f64)>> = regions.iter().map(|r| r.mask.barycenter()).collect();
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by_key(|&i| regions[i].instance_id);
    for oi in 0..order.len() {
        for oj in (oi + 1)..order.len() {
            let (i, j) = (order[oi], order[oj]);
            if !regions[i].mask.intersects(&regions[j].mask) {
                continue;
            }
            let overlap = regions[i].mask.intersection(&regions[j].mask);
            let (Some(ci), Some(cj)) = (centers[i], centers[j]) else {
                continue;
            };
            for (x, y) in overlap.iter_pixels() {
                let di = (x as f64 - ci.0).powi(2) + (y as f64 - ci.1).powi(2);
                let dj = (x as f64 - cj.0).powi(2) + (y as f64 - cj.1).powi(2);
                // i has the lower instance id, so it keeps the pixel on ties.
                if dj < di {
                    regions[i].mask.clear(x, y);
                } else {
                    regions[j].mask.clear(x, y);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn test_cam() -> CameraModel {
        CameraModel::new(500.0, 500.0, 320.0, 240.0, 1000.0, 1.0, 640, 480).unwrap()
    }

    fn rect_mask(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> MaskGrid {
        let mut m = MaskGrid::new(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y);
            }
        }
        m
    }

    fn flat_depth(w: u32, h: u32, raw: u16) -> DepthGrid {
        DepthGrid::from_data(w, h, vec![raw; (w * h) as usize]).unwrap()
    }

    fn region(id: u32, class: u32, mask: MaskGrid) -> SegmentedRegion {
        SegmentedRegion::new(id, class, mask)
    }

    #[test]
    fn identity_projection_preserves_mask() {
        let cam = test_cam();
        let r = region(0, 1, rect_mask(640, 480, 100, 100, 140, 140));
        let depth = flat_depth(640, 480, 2000);
        let out = project_region(&r, &depth, &cam, &Pose::identity()).unwrap();
        assert_eq!(out.mask, r.mask);
    }

    #[test]
    fn all_zero_depth_is_empty_projection() {
        let cam = test_cam();
        let r = region(0, 1, rect_mask(640, 480, 100, 100, 140, 140));
        let depth = DepthGrid::new(640, 480);
        assert!(matches!(
            project_region(&r, &depth, &cam, &Pose::identity()),
            Err(SegmentationError::EmptyProjection)
        ));
    }

    #[test]
    fn planar_region_translation_shifts_barycenter() {
        // Depth 2 m everywhere; camera translation of 0.1 m along x moves
        // every projection by fx * 0.1 / 2 = 25 px.
        let cam = test_cam();
        let r = region(0, 1, rect_mask(640, 480, 200, 200, 240, 240));
        let depth = flat_depth(640, 480, 2000);
        let rel = Pose::new(Matrix3::identity(), Vector3::new(0.1, 0.0, 0.0)).unwrap();
        let out = project_region(&r, &depth, &cam, &rel).unwrap();
        let (bx0, by0) = r.mask.barycenter().unwrap();
        let (bx1, by1) = out.mask.barycenter().unwrap();
        assert!((bx1 - (bx0 + 25.0)).abs() < 1.0, "bx1 = {bx1}");
        assert!((by1 - by0).abs() < 1.0, "by1 = {by1}");
    }

    #[test]
    fn refine_fixed_point_on_identical_frames() {
        let cam = test_cam();
        let seg = FrameSegmentation::new(
            1,
            640,
            480,
            vec![
                region(0, 1, rect_mask(640, 480, 100, 100, 150, 150)),
                region(1, 2, rect_mask(640, 480, 300, 200, 360, 260)),
            ],
        )
        .unwrap();
        let depth = flat_depth(640, 480, 2000);
        let w = SimilarityWeights::default();
        let out = refine(&seg, &depth, &seg, &Pose::identity(), &cam, &w).unwrap();
        assert_eq!(out.regions().len(), 2);
        for (a, b) in out.regions().iter().zip(seg.regions()) {
            assert_eq!(a.instance_id, b.instance_id);
            assert_eq!(a.mask, b.mask);
        }
    }

    #[test]
    fn refine_restores_missing_region() {
        let cam = test_cam();
        let prev = FrameSegmentation::new(
            0,
            640,
            480,
            vec![
                region(0, 1, rect_mask(640, 480, 100, 100, 150, 150)),
                region(1, 2, rect_mask(640, 480, 300, 200, 360, 260)),
            ],
        )
        .unwrap();
        // The second region failed to be segmented in the current frame.
        let cur = FrameSegmentation::new(
            1,
            640,
            480,
            vec![region(0, 1, rect_mask(640, 480, 100, 100, 150, 150))],
        )
        .unwrap();
        let depth = flat_depth(640, 480, 2000);
        let out = refine(
            &prev,
            &depth,
            &cur,
            &Pose::identity(),
            &cam,
            &SimilarityWeights::default(),
        )
        .unwrap();
        assert_eq!(out.regions().len(), 2);
        let added = out
            .regions()
            .iter()
            .find(|r| r.class_id == 2)
            .expect("missing region re-added");
        assert!(added.refined);
        assert_eq!(added.mask, prev.regions()[1].mask);
        // The added region gets a fresh instance id.
        assert_ne!(added.instance_id, prev.regions()[1].instance_id);
    }

    #[test]
    fn refine_replaces_oversized_region() {
        let cam = test_cam();
        let true_mask = rect_mask(640, 480, 200, 200, 240, 240);
        let prev =
            FrameSegmentation::new(0, 640, 480, vec![region(0, 1, true_mask.clone())]).unwrap();
        // Current segmentation produced a dilated version roughly twice the area.
        let oversized = {
            let mut m = rect_mask(640, 480, 192, 192, 248, 248);
            m.union_with(&true_mask);
            m
        };
        let cur = FrameSegmentation::new(1, 640, 480, vec![region(5, 1, oversized)]).unwrap();
        let depth = flat_depth(640, 480, 2000);
        let out = refine(
            &prev,
            &depth,
            &cur,
            &Pose::identity(),
            &cam,
            &SimilarityWeights::default(),
        )
        .unwrap();
        assert_eq!(out.regions().len(), 1);
        let r = &out.regions()[0];
        // Identity is kept from the current frame; the mask snaps to the
        // projection (plus at most a one-pixel salvage ring).
        assert_eq!(r.instance_id, 5);
        assert!(r.refined);
        assert_eq!(r.mask.intersection_area(&true_mask), true_mask.area());
        assert_eq!(r.mask.subtract_count(&true_mask.dilate3()), 0);
        let iou = r.mask.intersection_area(&true_mask) as f64 / r.mask.union_area(&true_mask) as f64;
        assert!(iou > 0.9, "replaced mask IoU {iou}");
    }

    #[test]
    fn refine_skips_unmatched_when_counts_equal() {
        let cam = test_cam();
        let prev = FrameSegmentation::new(
            0,
            640,
            480,
            vec![region(0, 1, rect_mask(640, 480, 100, 100, 130, 130))],
        )
        .unwrap();
        // Same region count but a completely different region: no match and
        // no addition.
        let cur = FrameSegmentation::new(
            1,
            640,
            480,
            vec![region(0, 3, rect_mask(640, 480, 500, 380, 560, 440))],
        )
        .unwrap();
        let depth = flat_depth(640, 480, 2000);
        let out = refine(
            &prev,
            &depth,
            &cur,
            &Pose::identity(),
            &cam,
            &SimilarityWeights::default(),
        )
        .unwrap();
        assert_eq!(out.regions().len(), 1);
        assert_eq!(out.regions()[0].class_id, 3);
    }

    #[test]
    fn refine_region_count_bound_and_disjointness() {
        let cam = test_cam();
        let depth = flat_depth(640, 480, 2000);
        let w = SimilarityWeights::default();
        let mut rng = crate::rng::Rng::new(31);
        for _ in 0..30 {
            let make_frame = |rng: &mut crate::rng::Rng, idx: usize, n: usize| {
                let regions: Vec<SegmentedRegion> = (0..n)
                    .map(|i| {
                        let x0 = rng.below(500) as u32;
                        let y0 = rng.below(350) as u32;
                        let wd = 20 + rng.below(60) as u32;
                        let ht = 20 + rng.below(60) as u32;
                        let mut r = region(
                            i as u32,
                            1 + rng.below(3) as u32,
                            rect_mask(640, 480, x0, y0, x0 + wd, y0 + ht),
                        );
                        // Random rectangles may overlap; keep only the part
                        // not already claimed.
                        r.instance_id = i as u32;
                        r
                    })
                    .collect();
                // Enforce disjointness by subtracting earlier regions.
                let mut clean: Vec<SegmentedRegion> = Vec::new();
                let mut occupied = MaskGrid::new(640, 480);
                for mut r in regions {
                    r.mask.subtract(&occupied);
                    if !r.mask.is_empty() {
                        occupied.union_with(&r.mask);
                        clean.push(r);
                    }
                }
                FrameSegmentation::new(idx, 640, 480, clean).unwrap()
            };
            let n_prev = 1 + rng.below(5);
            let n_cur = 1 + rng.below(5);
            let prev = make_frame(&mut rng, 0, n_prev);
            let cur = make_frame(&mut rng, 1, n_cur);
            let out = refine(&prev, &depth, &cur, &Pose::identity(), &cam, &w).unwrap();
            let bound = cur.regions().len()
                + prev.regions().len().saturating_sub(cur.regions().len());
            assert!(
                out.regions().len() <= bound,
                "count {} exceeds bound {bound}",
                out.regions().len()
            );
            // The constructor re-checks disjointness; re-run it explicitly.
            FrameSegmentation::new(1, 640, 480, out.regions().to_vec()).unwrap();
        }
    }
}
