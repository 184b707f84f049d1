//! Instance-mask data model, moveable-class shortlisting, region similarity,
//! and the pose-guided refinement workflow.

mod mask;
mod refine;

pub use mask::MaskGrid;
pub use refine::{project_region, refine};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("region mask is empty")]
    EmptyRegion,
    #[error("projected region has no surviving pixels")]
    EmptyProjection,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("class id {0} not present in the class table")]
    UnknownClass(u32),
    #[error("duplicate instance id {0} in frame")]
    DuplicateInstance(u32),
    #[error("region masks overlap (instances {0} and {1})")]
    OverlappingRegions(u32, u32),
    #[error("invalid similarity weights: {0}")]
    InvalidWeights(String),
}

/// One instance mask with identity, class, and motion bookkeeping flags.
#[derive(Clone, Debug)]
pub struct SegmentedRegion {
    /// Unique within its frame.
    pub instance_id: u32,
    pub class_id: u32,
    pub mask: MaskGrid,
    /// Class is on the shortlist of things likely to move or be moved.
    pub moveable: bool,
    /// Mask came from pose-guided refinement rather than straight from the
    /// segmentation source (drives the confidence convention in evaluation).
    pub refined: bool,
}

impl SegmentedRegion {
    pub fn new(instance_id: u32, class_id: u32, mask: MaskGrid) -> Self {
        Self {
            instance_id,
            class_id,
            mask,
            moveable: false,
            refined: false,
        }
    }

    pub fn area(&self) -> usize {
        self.mask.area()
    }
}

/// All instance regions of one frame. Masks are mutually disjoint; pixels in
/// no region are background.
#[derive(Clone, Debug)]
pub struct FrameSegmentation {
    pub frame_index: usize,
    pub width: u32,
    pub height: u32,
    regions: Vec<SegmentedRegion>,
}

impl FrameSegmentation {
    pub fn empty(frame_index: usize, width: u32, height: u32) -> Self {
        Self {
            frame_index,
            width,
            height,
            regions: Vec::new(),
        }
    }

    /// Validates instance-id uniqueness, non-empty masks, matching dimensions
    /// and pairwise disjointness.
    pub fn new(
        frame_index: usize,
        width: u32,
        height: u32,
        regions: Vec<SegmentedRegion>,
    ) -> Result<Self, SegmentationError> {
        let mut ids = BTreeSet::new();
        let mut occupied = MaskGrid::new(width, height);
        for r in &regions {
            if r.mask.width() != width || r.mask.height() != height {
                return Err(SegmentationError::DimensionMismatch(format!(
                    "region {} mask is {}x{}, frame is {}x{}",
                    r.instance_id,
                    r.mask.width(),
                    r.mask.height(),
                    width,
                    height
                )));
            }
            if r.mask.is_empty() {
                return Err(SegmentationError::EmptyRegion);
            }
            if !ids.insert(r.instance_id) {
                return Err(SegmentationError::DuplicateInstance(r.instance_id));
            }
            if occupied.intersects(&r.mask) {
                let other = regions
                    .iter()
                    .find(|o| o.instance_id != r.instance_id && o.mask.intersects(&r.mask))
                    .map(|o| o.instance_id)
                    .unwrap_or(u32::MAX);
                return Err(SegmentationError::OverlappingRegions(other, r.instance_id));
            }
            occupied.union_with(&r.mask);
        }
        Ok(Self {
            frame_index,
            width,
            height,
            regions,
        })
    }

    pub fn regions(&self) -> &[SegmentedRegion] {
        &self.regions
    }

    pub fn regions_mut(&mut self) -> &mut [SegmentedRegion] {
        &mut self.regions
    }

    pub fn region(&self, instance_id: u32) -> Option<&SegmentedRegion> {
        self.regions.iter().find(|r| r.instance_id == instance_id)
    }

    /// Per-pixel instance labels: 0 = background, otherwise instance_id + 1.
    pub fn label_grid(&self) -> Vec<u32> {
        let mut labels = vec![0u32; (self.width * self.height) as usize];
        for r in &self.regions {
            for (x, y) in r.mask.iter_pixels() {
                labels[(y * self.width + x) as usize] = r.instance_id + 1;
            }
        }
        labels
    }

    /// Instance owning a pixel, if any.
    pub fn instance_at(&self, x: u32, y: u32) -> Option<u32> {
        self.regions
            .iter()
            .find(|r| r.mask.get(x, y))
            .map(|r| r.instance_id)
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }
}

/// Table of known classes and whether each is on the moveable shortlist.
#[derive(Clone, Debug, Default)]
pub struct ClassTable {
    entries: BTreeMap<u32, ClassEntry>,
}

#[derive(Clone, Debug)]
pub struct ClassEntry {
    pub name: String,
    pub moveable: bool,
}

impl ClassTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class_id: u32, name: impl Into<String>, moveable: bool) {
        self.entries.insert(
            class_id,
            ClassEntry {
                name: name.into(),
                moveable,
            },
        );
    }

    pub fn get(&self, class_id: u32) -> Option<&ClassEntry> {
        self.entries.get(&class_id)
    }

    pub fn is_moveable(&self, class_id: u32) -> Option<bool> {
        self.entries.get(&class_id).map(|e| e.moveable)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u32, &ClassEntry)> {
        self.entries.iter()
    }
}

/// Weights of the two region-similarity terms plus the match cut-off.
#[derive(Clone, Copy, Debug)]
pub struct SimilarityWeights {
    /// Weight of the diagonal-normalized barycenter distance.
    pub w1: f64,
    /// Weight of the shape-difference term.
    pub w2: f64,
    /// Largest similarity score still accepted as a match.
    pub match_threshold: f64,
}

impl SimilarityWeights {
    pub fn new(w1: f64, w2: f64, match_threshold: f64) -> Result<Self, SegmentationError> {
        if w1 < 0.0 || w2 < 0.0 {
            return Err(SegmentationError::InvalidWeights(format!(
                "weights must be non-negative, got w1={w1}, w2={w2}"
            )));
        }
        if w1 + w2 <= 0.0 {
            return Err(SegmentationError::InvalidWeights(
                "w1 + w2 must be positive".into(),
            ));
        }
        if match_threshold <= 0.0 {
            return Err(SegmentationError::InvalidWeights(format!(
                "match_threshold must be positive, got {match_threshold}"
            )));
        }
        Ok(Self {
            w1,
            w2,
            match_threshold,
        })
    }
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.5,
            match_threshold: 0.4,
        }
    }
}

/// Similarity score between two regions: lower is more alike, 0 for
/// identical masks.
///
/// `w1 * (barycenter distance / diag) + w2 * sqrt(symdiff / (area_a + area_b))`.
pub fn region_similarity(
    a: &SegmentedRegion,
    b: &SegmentedRegion,
    w: &SimilarityWeights,
    diag: f64,
) -> Result<f64, SegmentationError> {
    let (ax, ay) = a.mask.barycenter().ok_or(SegmentationError::EmptyRegion)?;
    let (bx, by) = b.mask.barycenter().ok_or(SegmentationError::EmptyRegion)?;
    let dist = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
    let symdiff = a.mask.symmetric_difference_area(&b.mask) as f64;
    let total = (a.area() + b.area()) as f64;
    Ok(w.w1 * (dist / diag) + w.w2 * (symdiff / total).sqrt())
}

/// Candidate with the smallest similarity to `target`, if any scores below
/// the match threshold. Ties break toward the lowest instance id.
pub fn find_match<'a>(
    target: &SegmentedRegion,
    candidates: &'a [SegmentedRegion],
    w: &SimilarityWeights,
) -> Option<(&'a SegmentedRegion, f64)> {
    let diag = ((target.mask.width() as f64).powi(2) + (target.mask.height() as f64).powi(2)).sqrt();
    let mut best: Option<(&SegmentedRegion, f64)> = None;
    for cand in candidates {
        let Ok(score) = region_similarity(cand, target, w, diag) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((b, s)) => score < s || (score == s && cand.instance_id < b.instance_id),
        };
        if better {
            best = Some((cand, score));
        }
    }
    best.filter(|(_, score)| *score < w.match_threshold)
}

/// Sets the moveable flag of every region from the class table.
pub fn shortlist_moveable(
    seg: &FrameSegmentation,
    table: &ClassTable,
) -> Result<FrameSegmentation, SegmentationError> {
    let mut out = seg.clone();
    for r in &mut out.regions {
        r.moveable = table
            .is_moveable(r.class_id)
            .ok_or(SegmentationError::UnknownClass(r.class_id))?;
    }
    Ok(out)
}

/// Deterministically degrades a segmentation to emulate an imperfect
/// segmentation source: each region is dropped with probability `drop_rate`,
/// and each survivor is dilated by a 5x5 kernel with probability
/// `dilate_rate`. Dilation only claims pixels no other region owns, so the
/// non-overlap invariant survives.
pub fn corrupt(
    seg: &FrameSegmentation,
    drop_rate: f64,
    dilate_rate: f64,
    seed: u64,
) -> FrameSegmentation {
    let mut rng = Rng::new(seed);
    // Pixels claimed by any region so far, including regions not yet
    // processed; dilation may only take pixels outside this set.
    let mut occupied = MaskGrid::new(seg.width, seg.height);
    for r in &seg.regions {
        occupied.union_with(&r.mask);
    }
    let mut regions = Vec::new();
    for r in &seg.regions {
        if rng.unit() < drop_rate {
            continue;
        }
        let mut region = r.clone();
        if rng.unit() < dilate_rate {
            let mut grown = region.mask.dilate5();
            let mut foreign = occupied.clone();
            foreign.subtract(&r.mask);
            grown.subtract(&foreign);
            occupied.union_with(&grown);
            region.mask = grown;
        }
        regions.push(region);
    }
    FrameSegmentation {
        frame_index: seg.frame_index,
        width: seg.width,
        height: seg.height,
        regions,
    }
}
