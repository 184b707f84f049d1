//! Synthetic RGB-D scene generator: box-shaped objects with surface
//! landmarks inside a landmark-filled room, observed along a parametric or
//! explicit camera trajectory. Emits per-frame observations, perfect
//! instance masks, dense depth, true poses, and the landmark table.
//!
//! Generation is deterministic in the scene seed through the fixed-algorithm
//! generator in [`crate::rng`].

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraModel, DepthGrid, Pixel, Point3, Pose};
use crate::rng::{mix_seed, Rng};
use crate::segmentation::{ClassTable, FrameSegmentation, MaskGrid, SegmentedRegion};
use crate::tracking::{Descriptor, Feature, FrameObservation};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("scene spec parse error: {0}")]
    Parse(String),
}

/// Stream tags for deriving independent generator states from the scene seed.
const TAG_BACKGROUND: u64 = 0xB0;
const TAG_OBJECT: u64 = 0x0B;
const TAG_NOISE: u64 = 0x40;
const DESCRIPTOR_SALT: u64 = 0xD35C_0000_0000_0001;

/// Landmarks closer than this behind a surface count as occluded (meters).
const OCCLUSION_EPS: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MotionSpec {
    Static,
    /// Meters per second, applied per frame as `v * frame_dt`.
    LinearVelocity(Vector3<f64>),
    /// Object sits at its spec center in pass one and at the given center in
    /// pass two.
    RelocatedBetweenPasses(Point3),
}

#[derive(Clone, Debug)]
pub struct ObjectSpec {
    pub class_id: u32,
    pub class_name: String,
    /// Whether the class goes on the moveable shortlist in the emitted
    /// class table.
    pub moveable: bool,
    pub center: Point3,
    /// Full side lengths of the axis-aligned box, meters.
    pub extents: Vector3<f64>,
    pub surface_points: usize,
    pub motion: MotionSpec,
}

#[derive(Clone, Debug)]
pub enum TrajectorySpec {
    /// One world-to-camera pose per frame.
    Explicit(Vec<Pose>),
    /// Camera slides along a circular arc, always facing `look_at`.
    Arc(ArcSpec),
}

#[derive(Clone, Copy, Debug)]
pub struct ArcSpec {
    pub look_at: Point3,
    pub radius: f64,
    /// Total angle swept over the sequence, radians.
    pub sweep: f64,
    /// Amplitude of the vertical bob along the arc, meters.
    pub height_amp: f64,
}

/// Axis-aligned sampling volume for background landmarks.
#[derive(Clone, Copy, Debug)]
pub struct BoxRegion {
    pub center: Point3,
    /// Full side lengths, meters.
    pub extents: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_frames: usize,
    pub n_background_points: usize,
    /// Std-dev of the pixel noise added to emitted features.
    pub feature_noise_px: f64,
    /// Std-dev of the metric depth noise added to emitted features.
    pub depth_noise: f64,
    /// Seconds between frames.
    pub frame_dt: f64,
    /// Seed of the observation-noise stream. Defaults to `seed`; varying it
    /// alone replays the same scene geometry under fresh noise.
    pub noise_seed: u64,
    pub cam: CameraModel,
    pub background: BoxRegion,
    pub trajectory: TrajectorySpec,
    pub objects: Vec<ObjectSpec>,
    /// World offset applied to the camera centers in the second pass.
    pub second_pass_offset: Vector3<f64>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_frames < 2 {
            return Err(SimError::InvalidSpec(format!(
                "n_frames must be >= 2, got {}",
                self.n_frames
            )));
        }
        if self.feature_noise_px < 0.0 || self.depth_noise < 0.0 {
            return Err(SimError::InvalidSpec("noise std-devs must be >= 0".into()));
        }
        if self.frame_dt.is_nan() || self.frame_dt <= 0.0 {
            return Err(SimError::InvalidSpec("frame_dt must be positive".into()));
        }
        if self.n_background_points == 0 {
            return Err(SimError::InvalidSpec("need background points".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.extents.min().is_nan() || o.extents.min() <= 0.0 {
                return Err(SimError::InvalidSpec(format!(
                    "object {i} extents must be positive"
                )));
            }
            if o.surface_points < 4 {
                return Err(SimError::InvalidSpec(format!(
                    "object {i} needs >= 4 surface points"
                )));
            }
        }
        if let TrajectorySpec::Explicit(poses) = &self.trajectory {
            if poses.len() != self.n_frames {
                return Err(SimError::InvalidSpec(format!(
                    "explicit trajectory has {} poses for {} frames",
                    poses.len(),
                    self.n_frames
                )));
            }
        }
        Ok(())
    }

    /// Class table implied by the object specs.
    pub fn class_table(&self) -> ClassTable {
        let mut table = ClassTable::new();
        for o in &self.objects {
            table.insert(o.class_id, o.class_name.clone(), o.moveable);
        }
        table
    }
}

/// Which entity a landmark belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LandmarkOwner {
    Background,
    Object(usize),
}

#[derive(Clone, Debug)]
pub struct LandmarkTruth {
    pub id: u64,
    pub owner: LandmarkOwner,
    /// World position at every frame.
    pub positions: Vec<Point3>,
}

#[derive(Clone, Debug)]
pub struct FrameTruth {
    pub observation: FrameObservation,
    /// Perfect instance masks.
    pub segmentation: FrameSegmentation,
    /// True world-to-camera pose.
    pub pose: Pose,
}

#[derive(Clone, Debug)]
pub struct GroundTruthBundle {
    pub cam: CameraModel,
    pub class_table: ClassTable,
    pub frame_dt: f64,
    pub frames: Vec<FrameTruth>,
    pub landmarks: Vec<LandmarkTruth>,
}

/// Deterministic descriptor for a landmark id; SplitMix64 is a bijection on
/// u64, so descriptors are unique per landmark.
pub fn landmark_descriptor(id: u64) -> Descriptor {
    let mut r = Rng::new(id ^ DESCRIPTOR_SALT);
    Descriptor::new(r.next_u64().to_le_bytes().to_vec())
}

/// Generates the first pass of a scene.
pub fn generate(spec: &SceneSpec) -> Result<GroundTruthBundle, SimError> {
    generate_pass(spec, 0)
}

/// Generates the second pass: relocated objects and a camera trajectory
/// shifted by the configured offset, over identical background landmarks.
pub fn second_pass(spec: &SceneSpec) -> Result<GroundTruthBundle, SimError> {
    if !spec
        .objects
        .iter()
        .any(|o| matches!(o.motion, MotionSpec::RelocatedBetweenPasses(_)))
    {
        return Err(SimError::InvalidSpec(
            "second pass requires at least one relocated object".into(),
        ));
    }
    generate_pass(spec, 1)
}

struct SampledObject {
    /// Offsets from the box center to each surface landmark.
    local_offsets: Vec<Vector3<f64>>,
}

fn generate_pass(spec: &SceneSpec, pass: u64) -> Result<GroundTruthBundle, SimError> {
    spec.validate()?;
    let cam = &spec.cam;
    let base = Rng::new(spec.seed);

    // Background landmark positions are shared between passes.
    let mut bg_rng = base.derive(TAG_BACKGROUND);
    let mut landmark_positions_static: Vec<(LandmarkOwner, Vector3<f64>)> = Vec::new();
    for _ in 0..spec.n_background_points {
        let c = spec.background.center;
        let e = spec.background.extents;
        let p = Vector3::new(
            c.x + (bg_rng.unit() - 0.5) * e.x,
            c.y + (bg_rng.unit() - 0.5) * e.y,
            c.z + (bg_rng.unit() - 0.5) * e.z,
        );
        landmark_positions_static.push((LandmarkOwner::Background, p));
    }

    let sampled_objects: Vec<SampledObject> = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut rng = base.derive(TAG_OBJECT.wrapping_add(i as u64 + 1));
            SampledObject {
                local_offsets: (0..o.surface_points)
                    .map(|_| sample_box_surface(&mut rng, &o.extents))
                    .collect(),
            }
        })
        .collect();

    let poses = trajectory_poses(spec, pass)?;

    // Object centers per frame.
    let centers_at = |frame: usize| -> Vec<Point3> {
        spec.objects
            .iter()
            .map(|o| object_center(o, pass, frame as f64 * spec.frame_dt))
            .collect()
    };

    // Landmark table: ids first cover background, then object surfaces in
    // object order.
    let mut landmarks: Vec<LandmarkTruth> = Vec::new();
    let mut next_id = 0u64;
    for (owner, p) in &landmark_positions_static {
        landmarks.push(LandmarkTruth {
            id: next_id,
            owner: *owner,
            positions: (0..spec.n_frames).map(|_| Point3::from(*p)).collect(),
        });
        next_id += 1;
    }
    for (oi, sampled) in sampled_objects.iter().enumerate() {
        for offset in &sampled.local_offsets {
            let positions = (0..spec.n_frames)
                .map(|f| Point3::from(centers_at(f)[oi].coords + offset))
                .collect();
            landmarks.push(LandmarkTruth {
                id: next_id,
                owner: LandmarkOwner::Object(oi),
                positions,
            });
            next_id += 1;
        }
    }

    let mut frames = Vec::with_capacity(spec.n_frames);
    for (f, pose) in poses.iter().enumerate() {
        let centers = centers_at(f);
        let frame = render_frame(spec, cam, pose, f, &centers, &landmarks, pass)?;
        frames.push(frame);
    }

    Ok(GroundTruthBundle {
        cam: *cam,
        class_table: spec.class_table(),
        frame_dt: spec.frame_dt,
        frames,
        landmarks,
    })
}

fn object_center(o: &ObjectSpec, pass: u64, t: f64) -> Point3 {
    match o.motion {
        MotionSpec::Static => o.center,
        MotionSpec::LinearVelocity(v) => Point3::from(o.center.coords + v * t),
        MotionSpec::RelocatedBetweenPasses(new_center) => {
            if pass == 0 {
                o.center
            } else {
                new_center
            }
        }
    }
}

fn trajectory_poses(spec: &SceneSpec, pass: u64) -> Result<Vec<Pose>, SimError> {
    let offset = if pass == 0 {
        Vector3::zeros()
    } else {
        spec.second_pass_offset
    };
    match &spec.trajectory {
        TrajectorySpec::Explicit(poses) => Ok(poses
            .iter()
            .map(|p| {
                // Shift the camera center, keep the orientation.
                let c = p.center().coords + offset;
                Pose::from_parts_unchecked(*p.rotation(), -(p.rotation() * c))
            })
            .collect()),
        TrajectorySpec::Arc(arc) => {
            let n = spec.n_frames;
            (0..n)
                .map(|f| {
                    let theta = arc.sweep * f as f64 / (n - 1) as f64;
                    let eye = Point3::new(
                        arc.look_at.x + arc.radius * theta.sin() + offset.x,
                        arc.look_at.y + arc.height_amp * (2.0 * theta).sin() + offset.y,
                        arc.look_at.z - arc.radius * theta.cos() + offset.z,
                    );
                    look_at_pose(&eye, &arc.look_at)
                })
                .collect()
        }
    }
}

/// World-to-camera pose of a camera at `eye` looking at `target`, world +y
/// treated as down.
fn look_at_pose(eye: &Point3, target: &Point3) -> Result<Pose, SimError> {
    let forward = (target - eye).normalize();
    let down0 = Vector3::new(0.0, 1.0, 0.0);
    let right = down0.cross(&forward);
    if right.norm() < 1e-9 {
        return Err(SimError::InvalidSpec(
            "camera looks straight along the vertical axis".into(),
        ));
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * eye.coords);
    Ok(Pose::from_parts_unchecked(rotation, translation))
}

fn sample_box_surface(rng: &mut Rng, extents: &Vector3<f64>) -> Vector3<f64> {
    let (ex, ey, ez) = (extents.x, extents.y, extents.z);
    // Face areas: +-x, +-y, +-z.
    let areas = [ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.unit() * total;
    let mut face = 0;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            face = i;
            break;
        }
        pick -= a;
    }
    let (u, v) = (rng.unit() - 0.5, rng.unit() - 0.5);
    match face {
        0 => Vector3::new(0.5 * ex, u * ey, v * ez),
        1 => Vector3::new(-0.5 * ex, u * ey, v * ez),
        2 => Vector3::new(u * ex, 0.5 * ey, v * ez),
        3 => Vector3::new(u * ex, -0.5 * ey, v * ez),
        4 => Vector3::new(u * ex, v * ey, 0.5 * ez),
        _ => Vector3::new(u * ex, v * ey, -0.5 * ez),
    }
}

/// Depth along the pixel ray to an axis-aligned box, if hit. The ray has
/// z-depth parameterization: `point = origin + t * dir` with camera depth t.
fn ray_box_depth(
    origin: &Point3,
    dir: &Vector3<f64>,
    center: &Point3,
    extents: &Vector3<f64>,
) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        let lo = center[axis] - 0.5 * extents[axis];
        let hi = center[axis] + 0.5 * extents[axis];
        let o = origin[axis];
        let d = dir[axis];
        if d.abs() < 1e-15 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((lo - o) / d, (hi - o) / d);
        let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_far <= 0.0 {
        return None;
    }
    Some(if t_near > 0.0 { t_near } else { t_far })
}

#[allow(clippy::too_many_arguments)]
fn render_frame(
    spec: &SceneSpec,
    cam: &CameraModel,
    pose: &Pose,
    frame: usize,
    centers: &[Point3],
    landmarks: &[LandmarkTruth],
    pass: u64,
) -> Result<FrameTruth, SimError> {
    let (w, h) = (cam.width, cam.height);
    let n_px = (w * h) as usize;
    // Continuous z-buffer of box surfaces plus owning object per pixel.
    let mut surface_depth = vec![f64::INFINITY; n_px];
    let mut surface_owner = vec![usize::MAX; n_px];

    let pose_inv = pose.inverse();
    let cam_center = pose.center();
    for (oi, obj) in spec.objects.iter().enumerate() {
        let center = centers[oi];
        // Project the 8 corners to bound the raster area.
        let mut min_u = f64::INFINITY;
        let mut max_u = f64::NEG_INFINITY;
        let mut min_v = f64::INFINITY;
        let mut max_v = f64::NEG_INFINITY;
        let mut any_in_front = false;
        for corner in 0..8 {
            let sx = if corner & 1 == 0 { -0.5 } else { 0.5 };
            let sy = if corner & 2 == 0 { -0.5 } else { 0.5 };
            let sz = if corner & 4 == 0 { -0.5 } else { 0.5 };
            let p = Point3::new(
                center.x + sx * obj.extents.x,
                center.y + sy * obj.extents.y,
                center.z + sz * obj.extents.z,
            );
            if let Ok(px) = project(cam, pose, &p) {
                any_in_front = true;
                min_u = min_u.min(px.u);
                max_u = max_u.max(px.u);
                min_v = min_v.min(px.v);
                max_v = max_v.max(px.v);
            }
        }
        if !any_in_front {
            continue;
        }
        let x0 = (min_u.floor().max(0.0)) as u32;
        let x1 = (max_u.ceil().min((w - 1) as f64)) as u32;
        let y0 = (min_v.floor().max(0.0)) as u32;
        let y1 = (max_v.ceil().min((h - 1) as f64)) as u32;
        for y in y0..=y1 {
            for x in x0..=x1 {
                // Ray through the pixel center, parameterized by camera depth.
                let dir_cam = Vector3::new(
                    (x as f64 - cam.cx) / cam.fx,
                    (y as f64 - cam.cy) / cam.fy,
                    1.0,
                );
                let dir_world = pose_inv.rotation() * dir_cam;
                if let Some(depth) = ray_box_depth(&cam_center, &dir_world, &center, &obj.extents) {
                    let idx = (y * w + x) as usize;
                    if depth < surface_depth[idx] {
                        surface_depth[idx] = depth;
                        surface_owner[idx] = oi;
                    }
                }
            }
        }
    }

    // Landmark visibility: in front, in bounds, not behind a nearer surface,
    // and winner of its pixel cell among landmarks.
    struct Visible {
        landmark_idx: usize,
        px: Pixel,
        z: f64,
    }
    let mut cell_winner: std::collections::HashMap<(u32, u32), usize> =
        std::collections::HashMap::new();
    let mut visible: Vec<Visible> = Vec::new();
    for (li, lm) in landmarks.iter().enumerate() {
        let world = lm.positions[frame];
        let p_cam = pose.apply(&world);
        if p_cam.z <= 0.0 {
            continue;
        }
        let Ok(px) = project(cam, pose, &world) else {
            continue;
        };
        if !cam.contains(&px) {
            continue;
        }
        let cx = px.u.round().clamp(0.0, (w - 1) as f64) as u32;
        let cy = px.v.round().clamp(0.0, (h - 1) as f64) as u32;
        let idx = (cy * w + cx) as usize;
        if surface_depth[idx] < p_cam.z - OCCLUSION_EPS {
            continue;
        }
        match cell_winner.entry((cx, cy)) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(visible.len());
                visible.push(Visible {
                    landmark_idx: li,
                    px,
                    z: p_cam.z,
                });
            }
            std::collections::hash_map::Entry::Occupied(mut e) => {
                let cur = &visible[*e.get()];
                if p_cam.z < cur.z {
                    let slot = *e.get();
                    visible[slot] = Visible {
                        landmark_idx: li,
                        px,
                        z: p_cam.z,
                    };
                    e.insert(slot);
                }
            }
        }
    }
    // Cells may have been replaced; rebuild the survivor list in landmark order.
    let mut survivor_slots: Vec<usize> = cell_winner.values().copied().collect();
    survivor_slots.sort_unstable();
    survivor_slots.dedup();

    // Depth raster: box surfaces quantized to raw units, then landmark
    // depths splatted into still-empty cells.
    let mut depth = DepthGrid::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            if surface_owner[idx] != usize::MAX {
                let raw = (surface_depth[idx] * cam.depth_factor).round();
                if (1.0..=65535.0).contains(&raw) {
                    depth.set(x, y, raw as u16);
                }
            }
        }
    }

    // Instance masks from the surface raster.
    let mut masks: Vec<MaskGrid> = spec
        .objects
        .iter()
        .map(|_| MaskGrid::new(w, h))
        .collect();
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            if surface_owner[idx] != usize::MAX {
                masks[surface_owner[idx]].set(x, y);
            }
        }
    }

    // Emit features with noise, in landmark order, and patch masks so every
    // unoccluded object feature's cell belongs to its own object.
    let mut noise = Rng::new(mix_seed(
        mix_seed(spec.noise_seed, TAG_NOISE + pass),
        frame as u64,
    ));
    let mut features = Vec::with_capacity(survivor_slots.len());
    for &slot in &survivor_slots {
        let vis = &visible[slot];
        let lm = &landmarks[vis.landmark_idx];
        let cx = vis.px.u.round().clamp(0.0, (w - 1) as f64) as u32;
        let cy = vis.px.v.round().clamp(0.0, (h - 1) as f64) as u32;
        if let LandmarkOwner::Object(oi) = lm.owner {
            if !masks[oi].get(cx, cy) {
                for (mi, m) in masks.iter_mut().enumerate() {
                    if mi == oi {
                        m.set(cx, cy);
                    } else {
                        m.clear(cx, cy);
                    }
                }
                if depth.get(cx, cy) == 0 {
                    let raw = (vis.z * cam.depth_factor).round();
                    if (1.0..=65535.0).contains(&raw) {
                        depth.set(cx, cy, raw as u16);
                    }
                }
            }
        }
        let (mut u, mut v) = (vis.px.u, vis.px.v);
        let mut z = vis.z;
        if spec.feature_noise_px > 0.0 {
            u += noise.gaussian() * spec.feature_noise_px;
            v += noise.gaussian() * spec.feature_noise_px;
        }
        if spec.depth_noise > 0.0 {
            z += noise.gaussian() * spec.depth_noise;
        }
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            continue;
        }
        let raw_depth = (z * cam.depth_factor).max(0.0);
        features.push(Feature {
            pixel: Pixel::new(u, v),
            raw_depth,
            descriptor: landmark_descriptor(lm.id),
            landmark_hint: Some(lm.id),
        });
        // Splat the observed depth into cells the surfaces left empty.
        if depth.get(cx, cy) == 0 && (1.0..=65535.0).contains(&raw_depth) {
            depth.set(cx, cy, raw_depth.round() as u16);
        }
    }

    let observation = FrameObservation::new(
        frame,
        frame as f64 * spec.frame_dt,
        features,
        depth,
    )
    .map_err(|e| SimError::InvalidSpec(format!("frame {frame}: {e}")))?;

    let regions: Vec<SegmentedRegion> = masks
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(oi, m)| SegmentedRegion::new(oi as u32, spec.objects[oi].class_id, m))
        .collect();
    let segmentation = FrameSegmentation::new(frame, w, h, regions)
        .map_err(|e| SimError::InvalidSpec(format!("frame {frame} masks: {e}")))?;

    Ok(FrameTruth {
        observation,
        segmentation,
        pose: *pose,
    })
}

// ---------------------------------------------------------------------------
// Scene spec file format (TOML).

#[derive(Serialize, Deserialize)]
struct SceneFile {
    seed: u64,
    n_frames: usize,
    n_background_points: usize,
    #[serde(default)]
    feature_noise_px: f64,
    #[serde(default)]
    depth_noise: f64,
    #[serde(default = "default_frame_dt")]
    frame_dt: f64,
    #[serde(default)]
    noise_seed: Option<u64>,
    #[serde(default)]
    second_pass_offset: Option<[f64; 3]>,
    camera: CameraFile,
    background: BackgroundFile,
    trajectory: TrajectoryFile,
    #[serde(default, rename = "objects")]
    objects: Vec<ObjectFile>,
}

fn default_frame_dt() -> f64 {
    1.0 / 30.0
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    depth_factor: f64,
    #[serde(default = "default_image_scale")]
    image_scale: f64,
    width: u32,
    height: u32,
}

fn default_image_scale() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct BackgroundFile {
    center: [f64; 3],
    extents: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    kind: String,
    #[serde(default)]
    look_at: Option<[f64; 3]>,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default)]
    sweep: Option<f64>,
    #[serde(default)]
    height_amp: Option<f64>,
    /// Explicit poses as `tx ty tz qx qy qz qw` (camera-to-world).
    #[serde(default)]
    poses: Option<Vec<[f64; 7]>>,
}

#[derive(Serialize, Deserialize)]
struct ObjectFile {
    class_id: u32,
    #[serde(default)]
    class_name: Option<String>,
    #[serde(default = "default_true")]
    moveable: bool,
    center: [f64; 3],
    extents: [f64; 3],
    surface_points: usize,
    motion: MotionFile,
}

fn default_true() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    kind: String,
    #[serde(default)]
    velocity: Option<[f64; 3]>,
    #[serde(default)]
    new_center: Option<[f64; 3]>,
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<SceneSpec, SimError> {
        let file: SceneFile = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        let cam = CameraModel::new(
            file.camera.fx,
            file.camera.fy,
            file.camera.cx,
            file.camera.cy,
            file.camera.depth_factor,
            file.camera.image_scale,
            file.camera.width,
            file.camera.height,
        )
        .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        let trajectory = match file.trajectory.kind.as_str() {
            "arc" => TrajectorySpec::Arc(ArcSpec {
                look_at: array_point(file.trajectory.look_at.ok_or_else(|| {
                    SimError::Parse("arc trajectory needs look_at".into())
                })?),
                radius: file
                    .trajectory
                    .radius
                    .ok_or_else(|| SimError::Parse("arc trajectory needs radius".into()))?,
                sweep: file
                    .trajectory
                    .sweep
                    .ok_or_else(|| SimError::Parse("arc trajectory needs sweep".into()))?,
                height_amp: file.trajectory.height_amp.unwrap_or(0.0),
            }),
            "explicit" => {
                let rows = file
                    .trajectory
                    .poses
                    .ok_or_else(|| SimError::Parse("explicit trajectory needs poses".into()))?;
                let poses = rows
                    .iter()
                    .map(pose_from_tum_row)
                    .collect::<Result<Vec<_>, _>>()?;
                TrajectorySpec::Explicit(poses)
            }
            other => {
                return Err(SimError::Parse(format!("unknown trajectory kind '{other}'")));
            }
        };
        let objects = file
            .objects
            .into_iter()
            .enumerate()
            .map(|(i, o)| {
                let motion = match o.motion.kind.as_str() {
                    "static" => MotionSpec::Static,
                    "linear" => MotionSpec::LinearVelocity(array_vec(o.motion.velocity.ok_or_else(
                        || SimError::Parse(format!("object {i}: linear motion needs velocity")),
                    )?)),
                    "relocate" => MotionSpec::RelocatedBetweenPasses(array_point(
                        o.motion.new_center.ok_or_else(|| {
                            SimError::Parse(format!("object {i}: relocate motion needs new_center"))
                        })?,
                    )),
                    other => {
                        return Err(SimError::Parse(format!(
                            "object {i}: unknown motion kind '{other}'"
                        )));
                    }
                };
                Ok(ObjectSpec {
                    class_id: o.class_id,
                    class_name: o
                        .class_name
                        .unwrap_or_else(|| format!("class{}", o.class_id)),
                    moveable: o.moveable,
                    center: array_point(o.center),
                    extents: array_vec(o.extents),
                    surface_points: o.surface_points,
                    motion,
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        let spec = SceneSpec {
            seed: file.seed,
            n_frames: file.n_frames,
            n_background_points: file.n_background_points,
            feature_noise_px: file.feature_noise_px,
            depth_noise: file.depth_noise,
            frame_dt: file.frame_dt,
            noise_seed: file.noise_seed.unwrap_or(file.seed),
            cam,
            background: BoxRegion {
                center: array_point(file.background.center),
                extents: array_vec(file.background.extents),
            },
            trajectory,
            objects,
            second_pass_offset: file
                .second_pass_offset
                .map(array_vec)
                .unwrap_or_else(Vector3::zeros),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        let trajectory = match &self.trajectory {
            TrajectorySpec::Arc(a) => TrajectoryFile {
                kind: "arc".into(),
                look_at: Some([a.look_at.x, a.look_at.y, a.look_at.z]),
                radius: Some(a.radius),
                sweep: Some(a.sweep),
                height_amp: Some(a.height_amp),
                poses: None,
            },
            TrajectorySpec::Explicit(poses) => TrajectoryFile {
                kind: "explicit".into(),
                look_at: None,
                radius: None,
                sweep: None,
                height_amp: None,
                poses: Some(poses.iter().map(pose_to_tum_row).collect()),
            },
        };
        let file = SceneFile {
            seed: self.seed,
            n_frames: self.n_frames,
            n_background_points: self.n_background_points,
            feature_noise_px: self.feature_noise_px,
            depth_noise: self.depth_noise,
            frame_dt: self.frame_dt,
            noise_seed: Some(self.noise_seed),
            second_pass_offset: Some([
                self.second_pass_offset.x,
                self.second_pass_offset.y,
                self.second_pass_offset.z,
            ]),
            camera: CameraFile {
                fx: self.cam.fx,
                fy: self.cam.fy,
                cx: self.cam.cx,
                cy: self.cam.cy,
                depth_factor: self.cam.depth_factor,
                image_scale: self.cam.image_scale,
                width: self.cam.width,
                height: self.cam.height,
            },
            background: BackgroundFile {
                center: [
                    self.background.center.x,
                    self.background.center.y,
                    self.background.center.z,
                ],
                extents: [
                    self.background.extents.x,
                    self.background.extents.y,
                    self.background.extents.z,
                ],
            },
            trajectory,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectFile {
                    class_id: o.class_id,
                    class_name: Some(o.class_name.clone()),
                    moveable: o.moveable,
                    center: [o.center.x, o.center.y, o.center.z],
                    extents: [o.extents.x, o.extents.y, o.extents.z],
                    surface_points: o.surface_points,
                    motion: match o.motion {
                        MotionSpec::Static => MotionFile {
                            kind: "static".into(),
                            velocity: None,
                            new_center: None,
                        },
                        MotionSpec::LinearVelocity(v) => MotionFile {
                            kind: "linear".into(),
                            velocity: Some([v.x, v.y, v.z]),
                            new_center: None,
                        },
                        MotionSpec::RelocatedBetweenPasses(c) => MotionFile {
                            kind: "relocate".into(),
                            velocity: None,
                            new_center: Some([c.x, c.y, c.z]),
                        },
                    },
                })
                .collect(),
        };
        toml::to_string_pretty(&file).expect("scene spec serializes")
    }
}

fn array_point(a: [f64; 3]) -> Point3 {
    Point3::new(a[0], a[1], a[2])
}

fn array_vec(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// `tx ty tz qx qy qz qw` camera-to-world row into a world-to-camera pose.
pub fn pose_from_tum_row(row: &[f64; 7]) -> Result<Pose, SimError> {
    let q = nalgebra::Unit::new_normalize(nalgebra::Quaternion::new(
        row[6], row[3], row[4], row[5],
    ));
    let r_cw = q.to_rotation_matrix();
    let center = Vector3::new(row[0], row[1], row[2]);
    let rotation = r_cw.matrix().transpose();
    Ok(Pose::from_parts_unchecked(rotation, -(rotation * center)))
}

/// World-to-camera pose to a `tx ty tz qx qy qz qw` camera-to-world row.
pub fn pose_to_tum_row(pose: &Pose) -> [f64; 7] {
    let c = pose.center();
    let r_cw = nalgebra::Rotation3::from_matrix_unchecked(pose.rotation().transpose());
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&r_cw);
    [c.x, c.y, c.z, q.i, q.j, q.k, q.w]
}
