//! Pose estimation from 3D-2D correspondences by Gauss-Newton iteration on
//! a Huber-robustified reprojection cost.
//!
//! The pose is updated on the left in its tangent space:
//! `pose' = exp([t, w]) ∘ pose`. Steps are accepted only when they lower the
//! cost (backtracking on the step length), so the cost trace is
//! non-increasing by construction.

use nalgebra::{Cholesky, Matrix2x6, Matrix3, Matrix6, Vector2, Vector3, Vector6};

use crate::geometry::{CameraModel, Pixel, Point3, Pose};

use super::{TrackingConfig, TrackingError};

/// Cost a correspondence contributes while its point sits behind the camera.
/// Large enough that the line search never trades visible points away.
const BEHIND_CAMERA_RESIDUAL: f64 = 1e6;

/// Outcome of a pose solve, including the accepted-iteration cost trace.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SE(3) exponential map; `xi` packs translation then rotation.
pub fn se3_exp(xi: &Vector6<f64>) -> Pose {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let omega = Vector3::new(xi[3], xi[4], xi[5]);
    let theta = omega.norm();
    let w = skew(&omega);
    let (r, v) = if theta < 1e-12 {
        (
            Matrix3::identity() + w + 0.5 * w * w,
            Matrix3::identity() + 0.5 * w,
        )
    } else {
        let t2 = theta * theta;
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / t2;
        let c = (theta - theta.sin()) / (t2 * theta);
        (
            Matrix3::identity() + a * w + b * w * w,
            Matrix3::identity() + b * w + c * w * w,
        )
    };
    Pose::from_parts_unchecked(r, v * rho)
}

fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

/// Total robust reprojection cost of `pose` over the correspondences.
pub fn reprojection_cost(
    correspondences: &[(Point3, Pixel)],
    cam: &CameraModel,
    pose: &Pose,
    huber_delta: f64,
) -> f64 {
    let mut cost = 0.0;
    for (world, observed) in correspondences {
        match crate::geometry::project(cam, pose, world) {
            Ok(px) => {
                let e = px.distance(observed);
                cost += huber(e, huber_delta);
            }
            Err(_) => cost += huber(BEHIND_CAMERA_RESIDUAL, huber_delta),
        }
    }
    cost
}

/// Cost plus its exact gradient with respect to the left-multiplied tangent
/// update. Points behind the camera contribute the penalty cost and no
/// gradient.
pub fn reprojection_cost_gradient(
    correspondences: &[(Point3, Pixel)],
    cam: &CameraModel,
    pose: &Pose,
    huber_delta: f64,
) -> (f64, Vector6<f64>) {
    let mut cost = 0.0;
    let mut grad = Vector6::zeros();
    let s = cam.image_scale;
    for (world, observed) in correspondences {
        let pc = pose.apply(world);
        if pc.z <= 0.0 {
            cost += huber(BEHIND_CAMERA_RESIDUAL, huber_delta);
            continue;
        }
        let u = (cam.fx * pc.x + cam.cx * pc.z) / (s * pc.z);
        let v = (cam.fy * pc.y + cam.cy * pc.z) / (s * pc.z);
        let r = Vector2::new(u - observed.u, v - observed.v);
        let e = r.norm();
        cost += huber(e, huber_delta);
        let weight = if e <= huber_delta { 1.0 } else { huber_delta / e };
        let jac = residual_jacobian(cam, &pc);
        grad += weight * jac.transpose() * r;
    }
    (cost, grad)
}

/// 2x6 Jacobian of the pixel residual with respect to the tangent update,
/// evaluated at the camera-frame point.
fn residual_jacobian(cam: &CameraModel, pc: &Point3) -> Matrix2x6<f64> {
    let s = cam.image_scale;
    let z_inv = 1.0 / pc.z;
    let z_inv2 = z_inv * z_inv;
    // d(pixel)/d(camera point)
    let proj = nalgebra::Matrix2x3::new(
        cam.fx * z_inv / s,
        0.0,
        -cam.fx * pc.x * z_inv2 / s,
        0.0,
        cam.fy * z_inv / s,
        -cam.fy * pc.y * z_inv2 / s,
    );
    // d(camera point)/d(xi): identity for translation, -[pc]x for rotation.
    let mut point_jac = nalgebra::Matrix3x6::zeros();
    point_jac
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    point_jac
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-skew(&pc.coords)));
    proj * point_jac
}

/// Gauss-Newton solve with full iteration trace.
pub fn solve_pose(
    correspondences: &[(Point3, Pixel)],
    cam: &CameraModel,
    initial: &Pose,
    cfg: &TrackingConfig,
) -> Result<SolveReport, TrackingError> {
    if correspondences.len() < 6 {
        return Err(TrackingError::Degenerate("fewer than 6 correspondences"));
    }
    let mut pose = *initial;
    let mut cost = reprojection_cost(correspondences, cam, &pose, cfg.huber_delta);
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        let (h, g) = build_normal_equations(correspondences, cam, &pose, cfg.huber_delta);
        let Some(chol) = Cholesky::new(h) else {
            if iterations == 0 {
                return Err(TrackingError::Degenerate("singular normal equations"));
            }
            break;
        };
        let step = chol.solve(&(-g));

        // Backtrack on the step length until the cost decreases.
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..9 {
            let trial = se3_exp(&(alpha * step)).compose(&pose);
            let trial_cost = reprojection_cost(correspondences, cam, &trial, cfg.huber_delta);
            if trial_cost < cost {
                accepted = Some((trial, trial_cost));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next_pose, next_cost)) = accepted else {
            break;
        };
        let decrease = cost - next_cost;
        pose = next_pose;
        cost = next_cost;
        trace.push(cost);
        iterations += 1;
        if decrease < cfg.convergence_tol {
            break;
        }
    }

    Ok(SolveReport {
        pose,
        initial_cost,
        final_cost: cost,
        iterations,
        cost_trace: trace,
    })
}

fn build_normal_equations(
    correspondences: &[(Point3, Pixel)],
    cam: &CameraModel,
    pose: &Pose,
    huber_delta: f64,
) -> (Matrix6<f64>, Vector6<f64>) {
    let s = cam.image_scale;
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for (world, observed) in correspondences {
        let pc = pose.apply(world);
        if pc.z <= 0.0 {
            continue;
        }
        let u = (cam.fx * pc.x + cam.cx * pc.z) / (s * pc.z);
        let v = (cam.fy * pc.y + cam.cy * pc.z) / (s * pc.z);
        let r = Vector2::new(u - observed.u, v - observed.v);
        let e = r.norm();
        let weight = if e <= huber_delta { 1.0 } else { huber_delta / e };
        let jac = residual_jacobian(cam, &pc);
        h += weight * jac.transpose() * jac;
        g += weight * jac.transpose() * r;
    }
    (h, g)
}

/// Gauss-Newton minimization of the Huber-robustified reprojection error.
/// Returns the refined pose and its final cost; the cost never exceeds the
/// initial one.
pub fn estimate_pose(
    correspondences: &[(Point3, Pixel)],
    cam: &CameraModel,
    initial: &Pose,
    cfg: &TrackingConfig,
) -> Result<(Pose, f64), TrackingError> {
    solve_pose(correspondences, cam, initial, cfg).map(|r| (r.pose, r.final_cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::rng::Rng;

    fn test_cam() -> CameraModel {
        CameraModel::new(525.0, 525.0, 319.5, 239.5, 5000.0, 1.0, 640, 480).unwrap()
    }

    fn random_rotation(rng: &mut Rng, scale: f64) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.unit() - 0.5,
            rng.unit() - 0.5,
            rng.unit() - 0.5,
        );
        let angle = (rng.unit() - 0.5) * 2.0 * scale;
        *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    }

    /// A pose problem: world points in front of the camera, pixels generated
    /// by the true pose.
    fn make_problem(
        rng: &mut Rng,
        n: usize,
        truth: &Pose,
        cam: &CameraModel,
    ) -> Vec<(Point3, Pixel)> {
        let mut out = Vec::new();
        while out.len() < n {
            let p = Point3::new(
                rng.range(-2.0, 2.0),
                rng.range(-1.5, 1.5),
                rng.range(2.0, 6.0),
            );
            if let Ok(px) = project(cam, truth, &p) {
                if cam.contains(&px) {
                    out.push((p, px));
                }
            }
        }
        out
    }

    #[test]
    fn recovers_known_pose_from_perturbed_start() {
        let cam = test_cam();
        let mut rng = Rng::new(2024);
        for _ in 0..20 {
            let truth = Pose::new(
                random_rotation(&mut rng, 0.3),
                Vector3::new(rng.range(-0.5, 0.5), rng.range(-0.5, 0.5), rng.range(-0.3, 0.3)),
            )
            .unwrap();
            let corrs = make_problem(&mut rng, 40, &truth, &cam);
            let perturb = Pose::new(
                random_rotation(&mut rng, 0.05),
                Vector3::new(
                    rng.range(-0.05, 0.05),
                    rng.range(-0.05, 0.05),
                    rng.range(-0.05, 0.05),
                ),
            )
            .unwrap();
            let initial = perturb.compose(&truth);
            let (pose, cost) = estimate_pose(&corrs, &cam, &initial, &TrackingConfig::default())
                .unwrap();
            let (rot_err, trans_err) = pose.error_to(&truth);
            assert!(rot_err < 1e-6, "rotation error {rot_err}");
            assert!(trans_err < 1e-6, "translation error {trans_err}");
            assert!(cost < 1e-10, "final cost {cost}");
        }
    }

    #[test]
    fn truth_start_is_fixed_point() {
        let cam = test_cam();
        let mut rng = Rng::new(5);
        let truth = Pose::new(random_rotation(&mut rng, 0.2), Vector3::new(0.1, -0.05, 0.2))
            .unwrap();
        let corrs = make_problem(&mut rng, 30, &truth, &cam);
        let (pose, cost) = estimate_pose(&corrs, &cam, &truth, &TrackingConfig::default()).unwrap();
        assert!(cost < 1e-12, "cost {cost}");
        let (rot_err, trans_err) = pose.error_to(&truth);
        assert!(rot_err < 1e-9 && trans_err < 1e-9);
    }

    #[test]
    fn five_correspondences_is_degenerate() {
        let cam = test_cam();
        let mut rng = Rng::new(9);
        let corrs = make_problem(&mut rng, 5, &Pose::identity(), &cam);
        assert!(matches!(
            estimate_pose(&corrs, &cam, &Pose::identity(), &TrackingConfig::default()),
            Err(TrackingError::Degenerate(_))
        ));
    }

    #[test]
    fn cost_trace_is_non_increasing() {
        let cam = test_cam();
        let mut rng = Rng::new(77);
        for _ in 0..10 {
            let truth = Pose::new(random_rotation(&mut rng, 0.3), Vector3::new(0.2, 0.0, 0.1))
                .unwrap();
            let mut corrs = make_problem(&mut rng, 50, &truth, &cam);
            // Salt a few outliers so the Huber region is exercised.
            for c in corrs.iter_mut().take(8) {
                c.1 = Pixel::new(c.1.u + rng.range(-40.0, 40.0), c.1.v + rng.range(-40.0, 40.0));
            }
            let report = solve_pose(&corrs, &cam, &Pose::identity(), &TrackingConfig::default())
                .unwrap();
            for pair in report.cost_trace.windows(2) {
                assert!(pair[1] <= pair[0], "cost increased: {pair:?}");
            }
            assert!(report.final_cost <= report.initial_cost);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cam = test_cam();
        let mut rng = Rng::new(31);
        let truth = Pose::new(random_rotation(&mut rng, 0.2), Vector3::new(0.1, 0.1, -0.1))
            .unwrap();
        let corrs = make_problem(&mut rng, 25, &truth, &cam);
        // Evaluate near the truth so every residual stays below the Huber
        // threshold (smooth region).
        let pose = se3_exp(&(Vector6::new(0.002, -0.001, 0.001, 0.0005, -0.0004, 0.0008)))
            .compose(&truth);
        let delta = TrackingConfig::default().huber_delta;
        let (_, grad) = reprojection_cost_gradient(&corrs, &cam, &pose, delta);
        let h = 1e-6;
        for k in 0..6 {
            let mut xi = Vector6::zeros();
            xi[k] = h;
            let plus = reprojection_cost(&corrs, &cam, &se3_exp(&xi).compose(&pose), delta);
            xi[k] = -h;
            let minus = reprojection_cost(&corrs, &cam, &se3_exp(&xi).compose(&pose), delta);
            let fd = (plus - minus) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-4, "axis {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn se3_exp_zero_is_identity() {
        let p = se3_exp(&Vector6::zeros());
        assert!(p.orthonormality_defect() < 1e-12);
        assert!(p.translation().norm() == 0.0);
    }
}
