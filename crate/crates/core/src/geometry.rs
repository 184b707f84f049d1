//! Pinhole camera model, rigid transforms, and the back-projection /
//! reprojection chain everything else is built on.
//!
//! All poses map world coordinates to camera coordinates:
//! `p_cam = R * p_world + T`. The camera looks down +z; x is right and
//! y is down in both image and camera space.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// 3D point in meters. The frame (world or camera) is by convention of the
/// call site.
pub type Point3 = nalgebra::Point3<f64>;

/// Continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    /// Depth value 0 is the "no measurement" sentinel; the pixel must be skipped.
    #[error("zero depth at pixel (no measurement)")]
    ZeroDepth,
    /// The point has non-positive depth after the rigid transform.
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("rotation is not orthonormal (|R^T R - I| = {defect})")]
    NotARotation { defect: f64 },
}

/// Pinhole intrinsics plus the raw-depth conversion factor and the
/// homogeneous image scale divisor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    /// Focal length in pixels, x.
    pub fx: f64,
    /// Focal length in pixels, y.
    pub fy: f64,
    /// Principal point, x.
    pub cx: f64,
    /// Principal point, y.
    pub cy: f64,
    /// Raw depth units per meter.
    pub depth_factor: f64,
    /// Homogeneous scale divisor applied at projection time.
    pub image_scale: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        depth_factor: f64,
        image_scale: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            depth_factor,
            image_scale,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let positive = [
            ("fx", self.fx),
            ("fy", self.fy),
            ("depth_factor", self.depth_factor),
            ("image_scale", self.image_scale),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(GeometryError::InvalidCamera(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(0.0..self.width as f64).contains(&self.cx) {
            return Err(GeometryError::InvalidCamera(format!(
                "cx = {} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(0.0..self.height as f64).contains(&self.cy) {
            return Err(GeometryError::InvalidCamera(format!(
                "cy = {} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.v >= 0.0 && px.u < self.width as f64 && px.v < self.height as f64
    }
}

const ORTHONORMALITY_TOL: f64 = 1e-9;
/// Composition chains longer than this are re-orthonormalized to bound drift.
const REORTHONORMALIZE_AFTER: u32 = 100;

/// Rigid transform mapping world coordinates to camera coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    /// Length of the compose chain that produced this pose.
    chain: u32,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            chain: 0,
        }
    }

    /// Builds a pose from parts, rejecting rotations that are not orthonormal
    /// with determinant +1 (defect above 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if defect > ORTHONORMALITY_TOL || rotation.determinant() < 0.0 {
            return Err(GeometryError::NotARotation { defect });
        }
        Ok(Self {
            rotation,
            translation,
            chain: 0,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            chain: 0,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `R * p + T`.
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Camera center in world coordinates, `-R^T T`.
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Applies `b` first, then `a`: `compose(a, b).apply(p) == a.apply(b.apply(p))`.
    pub fn compose(&self, b: &Pose) -> Pose {
        let chain = self.chain.max(b.chain) + 1;
        let mut out = Pose {
            rotation: self.rotation * b.rotation,
            translation: self.rotation * b.translation + self.translation,
            chain,
        };
        if chain > REORTHONORMALIZE_AFTER {
            out.reorthonormalize();
        }
        out
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            chain: self.chain,
        }
    }

    /// Projects the rotation back onto SO(3) via SVD and resets the chain counter.
    fn reorthonormalize(&mut self) {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut flip = Matrix3::identity();
            flip[(2, 2)] = -1.0;
            r = u * flip * v_t;
        }
        self.rotation = r;
        self.chain = 0;
    }

    /// Deviation of `R^T R` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    /// Rotation angle (radians) and camera-center distance (meters)
    /// separating two poses.
    pub fn error_to(&self, other: &Pose) -> (f64, f64) {
        let rel = self.rotation * other.rotation.transpose();
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // atan2 of the skew magnitude keeps precision near zero, where acos
        // of the trace loses half the significant digits.
        let sin = ((rel - rel.transpose()).norm() / (2.0 * std::f64::consts::SQRT_2))
            .clamp(0.0, 1.0);
        let rot_err = sin.atan2(cos);
        let trans_err = (self.center() - other.center()).norm();
        (rot_err, trans_err)
    }
}

/// Pixel + raw depth to a camera-frame 3D point.
///
/// `Pz = raw_depth / depth_factor`, `Px = (u - cx) * Pz / fx`,
/// `Py = (v - cy) * Pz / fy`.
pub fn back_project(cam: &CameraModel, px: Pixel, raw_depth: f64) -> Result<Point3, GeometryError> {
    if raw_depth <= 0.0 {
        return Err(GeometryError::ZeroDepth);
    }
    let z = raw_depth / cam.depth_factor;
    let x = (px.u - cam.cx) * z / cam.fx;
    let y = (px.v - cam.cy) * z / cam.fy;
    Ok(Point3::new(x, y, z))
}

/// Applies `pose` to a source-frame point, then the intrinsics, dividing by
/// `image_scale * z`. Fails with `BehindCamera` when the transformed depth is
/// not positive.
pub fn project(cam: &CameraModel, pose: &Pose, p: &Point3) -> Result<Pixel, GeometryError> {
    let pc = pose.apply(p);
    if pc.z <= 0.0 {
        return Err(GeometryError::BehindCamera { z: pc.z });
    }
    let s = cam.image_scale;
    let u = (cam.fx * pc.x + cam.cx * pc.z) / (s * pc.z);
    let v = (cam.fy * pc.y + cam.cy * pc.z) / (s * pc.z);
    Ok(Pixel::new(u, v))
}

/// Transform mapping previous-camera coordinates to current-camera
/// coordinates: `R_rel = R_cur * R_prev^T`, `T_rel = T_cur - R_rel * T_prev`.
pub fn relative_pose(prev_fine: &Pose, cur_coarse: &Pose) -> Pose {
    cur_coarse.compose(&prev_fine.inverse())
}

/// Dense raw-depth raster aligned with the image grid. Value 0 means
/// "no measurement".
#[derive(Clone, Debug, PartialEq)]
pub struct DepthGrid {
    width: u32,
    height: u32,
    data: Vec<u16>,
}

impl DepthGrid {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<u16>) -> Option<Self> {
        if data.len() != (width * height) as usize {
            return None;
        }
        Some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, raw: u16) {
        self.data[(y * self.width + x) as usize] = raw;
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_cam() -> CameraModel {
        CameraModel::new(500.0, 500.0, 320.0, 240.0, 1000.0, 1.0, 640, 480).unwrap()
    }

    /// Fixed-algorithm generator for reproducible random poses in tests.
    fn splitmix(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    fn unit_f64(state: &mut u64) -> f64 {
        (splitmix(state) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_pose(state: &mut u64) -> Pose {
        let axis = Vector3::new(
            unit_f64(state) - 0.5,
            unit_f64(state) - 0.5,
            unit_f64(state) - 0.5,
        );
        let angle = (unit_f64(state) - 0.5) * 2.0;
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let t = Vector3::new(
            unit_f64(state) * 2.0 - 1.0,
            unit_f64(state) * 2.0 - 1.0,
            unit_f64(state) * 2.0 - 1.0,
        );
        Pose::new(*r.matrix(), t).unwrap()
    }

    #[test]
    fn back_project_principal_point_ray() {
        let cam = test_cam();
        let p = back_project(&cam, Pixel::new(320.0, 240.0), 1000.0).unwrap();
        assert_relative_eq!(p.x, 0.0);
        assert_relative_eq!(p.y, 0.0);
        assert_relative_eq!(p.z, 1.0);
    }

    #[test]
    fn back_project_off_axis() {
        // (420 - 320) * 2.0 / 500 = 0.4
        let cam = test_cam();
        let p = back_project(&cam, Pixel::new(420.0, 240.0), 2000.0).unwrap();
        assert_relative_eq!(p.x, 0.4);
        assert_relative_eq!(p.y, 0.0);
        assert_relative_eq!(p.z, 2.0);
    }

    #[test]
    fn back_project_zero_depth_rejected() {
        let cam = test_cam();
        assert!(matches!(
            back_project(&cam, Pixel::new(10.0, 10.0), 0.0),
            Err(GeometryError::ZeroDepth)
        ));
    }

    #[test]
    fn project_identity_center() {
        let cam = test_cam();
        let px = project(&cam, &Pose::identity(), &Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px.u, 320.0);
        assert_relative_eq!(px.v, 240.0);
    }

    #[test]
    fn project_translated() {
        let cam = test_cam();
        let pose = Pose::new(Matrix3::identity(), Vector3::new(0.1, 0.0, 0.0)).unwrap();
        let px = project(&cam, &pose, &Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px.u, 370.0);
        assert_relative_eq!(px.v, 240.0);
    }

    #[test]
    fn project_behind_camera_rejected() {
        let cam = test_cam();
        assert!(matches!(
            project(&cam, &Pose::identity(), &Point3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn relative_pose_of_equal_poses_is_identity() {
        let mut state = 11u64;
        let p = random_pose(&mut state);
        let rel = relative_pose(&p, &p);
        assert!((rel.rotation() - Matrix3::identity()).norm() < 1e-12);
        assert!(rel.translation().norm() < 1e-12);
    }

    #[test]
    fn relative_pose_pure_translation() {
        let prev = Pose::identity();
        let cur = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let rel = relative_pose(&prev, &cur);
        assert_relative_eq!(rel.translation().x, 1.0);
        assert!((rel.rotation() - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn relative_pose_composition_oracle() {
        // rel(prev, cur) ∘ prev must reproduce cur, checked on 1000 random pairs.
        let mut state = 42u64;
        for _ in 0..1000 {
            let prev = random_pose(&mut state);
            let cur = random_pose(&mut state);
            let rel = relative_pose(&prev, &cur);
            let recomposed = rel.compose(&prev);
            assert!((recomposed.rotation() - cur.rotation()).norm() < 1e-9);
            assert!((recomposed.translation() - cur.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut state = 7u64;
        let a = random_pose(&mut state);
        let id = a.compose(&a.inverse());
        assert!((id.rotation() - Matrix3::identity()).norm() < 1e-12);
        assert!(id.translation().norm() < 1e-12);
        let id2 = Pose::identity().inverse();
        assert!((id2.rotation() - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn compose_associativity() {
        let mut state = 3u64;
        for _ in 0..200 {
            let a = random_pose(&mut state);
            let b = random_pose(&mut state);
            let c = random_pose(&mut state);
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!((left.rotation() - right.rotation()).norm() < 1e-12);
            assert!((left.translation() - right.translation()).norm() < 1e-12);
        }
    }

    #[test]
    fn transform_consistency() {
        // project(cam, compose(b, a), p) == project(cam, b, a.apply(p))
        let cam = test_cam();
        let mut state = 99u64;
        for _ in 0..200 {
            let a = random_pose(&mut state);
            let b = random_pose(&mut state);
            let p = Point3::new(
                unit_f64(&mut state) - 0.5,
                unit_f64(&mut state) - 0.5,
                unit_f64(&mut state) + 2.0,
            );
            let direct = project(&cam, &b.compose(&a), &p);
            let staged = project(&cam, &b, &a.apply(&p));
            match (direct, staged) {
                (Ok(d), Ok(s)) => assert!(d.distance(&s) < 1e-9),
                (Err(_), Err(_)) => {}
                other => panic!("projection disagreement: {other:?}"),
            }
        }
    }

    #[test]
    fn orthonormality_preserved_over_long_chains() {
        let mut state = 17u64;
        let mut pose = Pose::identity();
        for _ in 0..5000 {
            pose = random_pose(&mut state).compose(&pose);
        }
        assert!(pose.orthonormality_defect() < 1e-9);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.5;
        assert!(matches!(
            Pose::new(m, Vector3::zeros()),
            Err(GeometryError::NotARotation { .. })
        ));
    }

    #[test]
    fn camera_validation() {
        assert!(CameraModel::new(0.0, 500.0, 320.0, 240.0, 1000.0, 1.0, 640, 480).is_err());
        assert!(CameraModel::new(500.0, 500.0, 700.0, 240.0, 1000.0, 1.0, 640, 480).is_err());
        assert!(CameraModel::new(500.0, 500.0, 320.0, 240.0, -1.0, 1.0, 640, 480).is_err());
    }
}
