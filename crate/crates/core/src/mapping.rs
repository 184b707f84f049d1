//! Landmark maps: the per-session tracking map used for frame-to-map pose
//! estimation, and the long-term map restricted to background points for
//! reuse across visits.
//!
//! # Map file format (binary, little-endian)
//!
//! ```text
//! magic            8 bytes  "SGLMMAP\0"
//! version          u32      currently 1
//! point count      u64
//! per point:
//!   x, y, z        3 x f64
//!   provenance     u8       0 = background, 1 = static instance
//!   class id       u32      only present when provenance = 1
//!   descriptor len u32
//!   descriptor     len bytes
//!   observations   u32
//! ```

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::geometry::{back_project, CameraModel, Point3, Pose};
use crate::tracking::{
    estimate_pose, ClassifiedPoints, Descriptor, FrameObservation, TrackingConfig,
    TrackingError,
};

const MAP_MAGIC: &[u8; 8] = b"SGLMMAP\0";
const MAP_VERSION: u32 = 1;

/// Where a map point came from: the background set, or the static set of an
/// instance of the given class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Background,
    StaticInstance(u32),
}

#[derive(Clone, Debug)]
pub struct MapPoint {
    /// World frame.
    pub position: Point3,
    pub descriptor: Descriptor,
    pub provenance: Provenance,
    pub observation_count: u32,
}

/// Uniform-cell spatial hash for merge-radius queries.
#[derive(Clone, Debug, Default)]
struct SpatialGrid {
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl SpatialGrid {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: &Point3) -> (i64, i64, i64) {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    fn insert(&mut self, p: &Point3, idx: u32) {
        self.buckets.entry(self.key(p)).or_default().push(idx);
    }

    /// Nearest stored index within `radius` of `p`.
    fn nearest_within<'a>(
        &self,
        p: &Point3,
        radius: f64,
        positions: impl Fn(u32) -> &'a Point3,
    ) -> Option<u32> {
        let (kx, ky, kz) = self.key(p);
        let reach = (radius / self.cell).ceil() as i64;
        let mut best: Option<(f64, u32)> = None;
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let Some(bucket) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &i in bucket {
                        let d = (positions(i) - p).norm();
                        if d <= radius {
                            let better = match best {
                                None => true,
                                Some((bd, bi)) => d < bd || (d == bd && i < bi),
                            };
                            if better {
                                best = Some((d, i));
                            }
                        }
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

/// Per-session landmark map. Points are deduplicated: no two lie within
/// `merge_radius` of each other.
#[derive(Clone, Debug)]
pub struct TrackingMap {
    points: Vec<MapPoint>,
    keyframe_poses: Vec<(usize, Pose)>,
    merge_radius: f64,
    grid: SpatialGrid,
}

pub const DEFAULT_MERGE_RADIUS: f64 = 0.01;

impl TrackingMap {
    pub fn new(merge_radius: f64) -> Self {
        assert!(merge_radius > 0.0);
        Self {
            points: Vec::new(),
            keyframe_poses: Vec::new(),
            merge_radius,
            grid: SpatialGrid::new(merge_radius),
        }
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    pub fn keyframe_poses(&self) -> &[(usize, Pose)] {
        &self.keyframe_poses
    }

    pub fn merge_radius(&self) -> f64 {
        self.merge_radius
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Increments the match's observation count, or inserts a new point when
    /// nothing lies within the merge radius. Returns true on insertion.
    fn insert_or_merge(&mut self, point: MapPoint) -> bool {
        let positions = |i: u32| &self.points[i as usize].position;
        if let Some(i) = self
            .grid
            .nearest_within(&point.position, self.merge_radius, positions)
        {
            self.points[i as usize].observation_count += 1;
            false
        } else {
            let idx = self.points.len() as u32;
            self.grid.insert(&point.position, idx);
            self.points.push(point);
            true
        }
    }
}

/// Map of background-provenance points only, intended to stay valid across
/// visits because nothing in it is expected to move.
#[derive(Clone, Debug)]
pub struct LongTermMap {
    points: Vec<MapPoint>,
    merge_radius: f64,
    grid: SpatialGrid,
}

impl LongTermMap {
    pub fn new(merge_radius: f64) -> Self {
        assert!(merge_radius > 0.0);
        Self {
            points: Vec::new(),
            merge_radius,
            grid: SpatialGrid::new(merge_radius),
        }
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every point carries background provenance. The long-term
    /// map must keep this at all times.
    pub fn is_pure(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.provenance == Provenance::Background)
    }
}

/// Counts from one tracking-map update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MapUpdate {
    pub inserted: usize,
    pub merged: usize,
}

/// Folds a keyframe into the tracking map: every feature in the background
/// set and in instances judged static (or not yet judged, which only happens
/// while the map is empty) is back-projected through the fine pose into the
/// world frame and merged. Features of moving instances never enter the map.
///
/// Static instances of moveable classes label their points
/// `StaticInstance(class)`; instances of classes that cannot move count as
/// scene structure and label their points `Background`.
pub fn update_tracking_map(
    map: &mut TrackingMap,
    obs: &FrameObservation,
    points: &ClassifiedPoints,
    fine: &Pose,
    cam: &CameraModel,
) -> MapUpdate {
    let fine_inv = fine.inverse();
    let mut update = MapUpdate::default();
    let mut insert = |map: &mut TrackingMap, idx: usize, provenance: Provenance| {
        let f = &obs.features[idx];
        let Ok(p_cam) = back_project(cam, f.pixel, f.raw_depth) else {
            return;
        };
        let position = fine_inv.apply(&p_cam);
        let point = MapPoint {
            position,
            descriptor: f.descriptor.clone(),
            provenance,
            observation_count: 1,
        };
        if map.insert_or_merge(point) {
            update.inserted += 1;
        } else {
            update.merged += 1;
        }
    };
    for &fi in &points.background {
        insert(map, fi, Provenance::Background);
    }
    for (&instance, feats) in &points.per_instance {
        if points.is_moving(instance) {
            continue;
        }
        let meta = points.instance_info.get(&instance);
        let provenance = match meta {
            Some(m) if m.moveable => Provenance::StaticInstance(m.class_id),
            Some(_) => Provenance::Background,
            None => Provenance::Background,
        };
        for &fi in feats {
            insert(map, fi, provenance);
        }
    }
    map.keyframe_poses.push((obs.frame_index, *fine));
    update
}

/// Copies background-provenance tracking points absent from the long-term
/// map (merge-radius dedup) into it. Returns how many were added.
pub fn update_long_term_map(ltm: &mut LongTermMap, tm: &TrackingMap) -> usize {
    let mut added = 0;
    for p in &tm.points {
        if p.provenance != Provenance::Background {
            continue;
        }
        let positions = |i: u32| &ltm.points[i as usize].position;
        if ltm
            .grid
            .nearest_within(&p.position, ltm.merge_radius, positions)
            .is_none()
        {
            let idx = ltm.points.len() as u32;
            ltm.grid.insert(&p.position, idx);
            ltm.points.push(p.clone());
            added += 1;
        }
    }
    added
}

/// Yaw seeds tried by `relocalize`, in order.
const RELOCALIZE_YAW_SEEDS: usize = 8;
/// A seed is accepted outright when at least half its residuals are inliers
/// with this RMS (pixels); otherwise all seeds run and the best cost wins.
const RELOCALIZE_ACCEPT_RMS: f64 = 1.5;

/// Pose of an observation against a map with no prior: features are matched
/// to map points by descriptor, then the solver runs from a coarse grid of
/// yaw-rotated identity seeds and the best final cost wins.
pub fn relocalize(
    map_points: &[MapPoint],
    obs: &FrameObservation,
    cam: &CameraModel,
    cfg: &TrackingConfig,
) -> Result<(Pose, f64), TrackingError> {
    if map_points.is_empty() {
        return Err(TrackingError::Degenerate("empty map"));
    }
    // Exact-descriptor index; misses fall back to a linear Hamming scan.
    let mut by_descriptor: HashMap<&[u8], u32> = HashMap::new();
    for (i, p) in map_points.iter().enumerate() {
        by_descriptor.entry(p.descriptor.bytes()).or_insert(i as u32);
    }
    let mut correspondences = Vec::new();
    for f in &obs.features {
        let gate =
            (f.descriptor.len() as f64 * 8.0 * crate::tracking::DESCRIPTOR_GATE_FRACTION) as u32;
        let mi = match by_descriptor.get(f.descriptor.bytes()) {
            Some(&i) => Some(i as usize),
            None => map_points
                .iter()
                .enumerate()
                .map(|(i, p)| (f.descriptor.hamming(&p.descriptor), i))
                .filter(|(d, _)| *d <= gate)
                .min()
                .map(|(_, i)| i),
        };
        if let Some(mi) = mi {
            correspondences.push((map_points[mi].position, f.pixel));
        }
    }
    if correspondences.len() < 6 {
        return Err(TrackingError::Degenerate("fewer than 6 descriptor matches"));
    }

    let mut best: Option<(Pose, f64)> = None;
    for k in 0..RELOCALIZE_YAW_SEEDS {
        let yaw = k as f64 * std::f64::consts::TAU / RELOCALIZE_YAW_SEEDS as f64;
        let seed = Pose::new(
            *nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::y_axis(), yaw).matrix(),
            nalgebra::Vector3::zeros(),
        )
        .expect("yaw rotation is orthonormal");
        let Ok((pose, cost)) = estimate_pose(&correspondences, cam, &seed, cfg) else {
            continue;
        };
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((pose, cost));
        }
        if inlier_rms_accepts(&correspondences, cam, &pose, cfg) {
            break;
        }
    }
    best.ok_or(TrackingError::Degenerate("all relocalization seeds failed"))
}

fn inlier_rms_accepts(
    correspondences: &[(Point3, crate::geometry::Pixel)],
    cam: &CameraModel,
    pose: &Pose,
    cfg: &TrackingConfig,
) -> bool {
    let gate = 2.0 * cfg.huber_delta;
    let mut inliers = 0usize;
    let mut sum_sq = 0.0;
    for (world, observed) in correspondences {
        if let Ok(px) = crate::geometry::project(cam, pose, world) {
            let e = px.distance(observed);
            if e < gate {
                inliers += 1;
                sum_sq += e * e;
            }
        }
    }
    if inliers * 2 < correspondences.len() {
        return false;
    }
    (sum_sq / inliers as f64).sqrt() < RELOCALIZE_ACCEPT_RMS
}

fn write_points(w: &mut impl Write, points: &[MapPoint]) -> io::Result<()> {
    w.write_all(MAP_MAGIC)?;
    w.write_all(&MAP_VERSION.to_le_bytes())?;
    w.write_all(&(points.len() as u64).to_le_bytes())?;
    for p in points {
        w.write_all(&p.position.x.to_le_bytes())?;
        w.write_all(&p.position.y.to_le_bytes())?;
        w.write_all(&p.position.z.to_le_bytes())?;
        match p.provenance {
            Provenance::Background => w.write_all(&[0u8])?,
            Provenance::StaticInstance(class) => {
                w.write_all(&[1u8])?;
                w.write_all(&class.to_le_bytes())?;
            }
        }
        w.write_all(&(p.descriptor.len() as u32).to_le_bytes())?;
        w.write_all(p.descriptor.bytes())?;
        w.write_all(&p.observation_count.to_le_bytes())?;
    }
    Ok(())
}

fn read_points(r: &mut impl Read) -> io::Result<Vec<MapPoint>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAP_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad map magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != MAP_VERSION {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported map version {version}"),
        ));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    let mut points = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut coords = [0.0f64; 3];
        for c in &mut coords {
            r.read_exact(&mut b8)?;
            *c = f64::from_le_bytes(b8);
        }
        let mut pb = [0u8; 1];
        r.read_exact(&mut pb)?;
        let provenance = match pb[0] {
            0 => Provenance::Background,
            1 => {
                r.read_exact(&mut b4)?;
                Provenance::StaticInstance(u32::from_le_bytes(b4))
            }
            other => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("bad provenance byte {other}"),
                ));
            }
        };
        r.read_exact(&mut b4)?;
        let dlen = u32::from_le_bytes(b4) as usize;
        let mut desc = vec![0u8; dlen];
        r.read_exact(&mut desc)?;
        r.read_exact(&mut b4)?;
        let observation_count = u32::from_le_bytes(b4);
        points.push(MapPoint {
            position: Point3::new(coords[0], coords[1], coords[2]),
            descriptor: Descriptor::new(desc),
            provenance,
            observation_count,
        });
    }
    Ok(points)
}

/// Writes any point collection in the map file format.
pub fn save_map_points(path: &Path, points: &[MapPoint]) -> io::Result<()> {
    let mut file = io::BufWriter::new(std::fs::File::create(path)?);
    write_points(&mut file, points)?;
    file.flush()
}

/// Reads a map file back into points.
pub fn load_map_points(path: &Path) -> io::Result<Vec<MapPoint>> {
    let mut file = io::BufReader::new(std::fs::File::open(path)?);
    read_points(&mut file)
}
