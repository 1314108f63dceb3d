//! SE(3) transforms, pinhole cameras, and 2D→3D query lifting.
//!
//! Conventions used throughout the crate:
//!
//! - The world (global) frame is z-up East-North-Up.
//! - The camera frame is x-right, y-down, z-forward.
//! - Rotations are stored as 3×3 matrices; the lifting math consumes the
//!   rotation block of a camera-to-global transform directly.
//!
//! Lifting a 2D pixel proposal to a 3D point needs a depth. For high-vantage
//! cameras (roadside units, drones) the depth is derived from a predicted
//! *global height* via similar triangles in a "virtual" frame — a frame
//! centered at the camera with axes parallel to the global frame:
//!
//! ```text
//! depth = (z_target_global − z_camera_global) / z_virt(ray)
//! ```
//!
//! where `z_virt(ray)` is the z-component of the unit-depth pixel ray rotated
//! into the virtual frame. Near-horizontal rays make that denominator vanish,
//! so the computation is guarded by [`DEGENERACY_EPS`]; ground-level cameras
//! should use [`LiftStrategy::DirectDepth`] instead.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::textio::{fmt_f64, parse_f64};

/// 3D vector in meters (or a dimensionless ray direction).
pub type Vec3 = Vector3<f64>;

/// Tolerance for the rotation orthonormality invariant.
pub const ROTATION_TOL: f64 = 1e-9;

/// Degeneracy guard on the virtual-frame z-component of a pixel ray.
///
/// `|z_virt|` below this bound would amplify height error into depth error by
/// more than 1000×, so such rays are rejected instead of lifted.
pub const DEGENERACY_EPS: f64 = 1e-3;

/// Errors from camera and lifting operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("camera intrinsics invalid: fx, fy must be positive and finite")]
    InvalidIntrinsics,
    #[error("pixel proposal invalid: {0}")]
    InvalidProposal(&'static str),
    #[error("point is behind the camera (z_cam = {z_cam})")]
    BehindCamera { z_cam: f64 },
    #[error("degenerate lifting geometry: |z_virt| = {z_virt_abs:e} < {eps:e}")]
    DegenerateGeometry { z_virt_abs: f64, eps: f64 },
    #[error("height-derived depth {depth} is not positive; ray points away from the target height")]
    NegativeDepth { depth: f64 },
    #[error("{strategy:?} lifting requires the `{field}` prediction")]
    MissingPrediction {
        strategy: LiftStrategy,
        field: &'static str,
    },
    #[error("bad flat record: {0}")]
    BadRecord(String),
}

/// Rigid SE(3) transform: `p ↦ R·p + t`.
///
/// The rotation is guaranteed orthonormal with determinant +1 (within
/// [`ROTATION_TOL`]) by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    /// Build a transform, validating the rotation invariant.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        if t.rotation_error() > ROTATION_TOL || !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(t)
    }

    /// Identity transform.
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Pure translation.
    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about the global z-axis by `yaw` radians plus a translation.
    pub fn from_yaw_translation(yaw: f64, translation: Vec3) -> Self {
        Self {
            rotation: yaw_matrix(yaw),
            translation,
        }
    }

    pub(crate) fn new_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        let t = Self {
            rotation,
            translation,
        };
        debug_assert!(t.rotation_error() <= ROTATION_TOL);
        t
    }

    /// Max-abs deviation of `RᵀR` from identity and `det R` from +1.
    pub fn rotation_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        let mut err: f64 = (self.rotation.determinant() - 1.0).abs();
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { 1.0 } else { 0.0 };
                err = err.max((gram[(r, c)] - target).abs());
            }
        }
        if !err.is_finite() {
            return f64::INFINITY;
        }
        err
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// Apply the transform to a point.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotate a direction (no translation).
    pub fn rotate(&self, d: Vec3) -> Vec3 {
        self.rotation * d
    }

    /// Composition: `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new_unchecked(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Inverse transform.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new_unchecked(rt, -(rt * self.translation))
    }

    /// Yaw of the rotation (angle of the rotated x-axis in the global xy-plane).
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

/// Rotation matrix about the z-axis.
pub fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Pinhole camera: intrinsics plus a camera-to-global pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose_cam2glb: RigidTransform,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        pose_cam2glb: RigidTransform,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite())
            || !cx.is_finite()
            || !cy.is_finite()
        {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            pose_cam2glb,
        })
    }

    /// Camera optical axis (+z of the camera frame) in global coordinates.
    pub fn forward_axis_glb(&self) -> Vec3 {
        self.pose_cam2glb.rotate(Vec3::new(0.0, 0.0, 1.0))
    }

    /// Camera center in global coordinates.
    pub fn center_glb(&self) -> Vec3 {
        self.pose_cam2glb.translation()
    }

    /// Serialize as a flat key-value record (single line).
    ///
    /// Field order: `fx fy cx cy r00..r22 (row-major) tx ty tz`.
    pub fn to_record(&self) -> String {
        let mut parts = vec![
            format!("fx={}", fmt_f64(self.fx)),
            format!("fy={}", fmt_f64(self.fy)),
            format!("cx={}", fmt_f64(self.cx)),
            format!("cy={}", fmt_f64(self.cy)),
        ];
        let r = self.pose_cam2glb.rotation();
        for row in 0..3 {
            for col in 0..3 {
                parts.push(format!("r{row}{col}={}", fmt_f64(r[(row, col)])));
            }
        }
        let t = self.pose_cam2glb.translation();
        for (name, v) in [("tx", t.x), ("ty", t.y), ("tz", t.z)] {
            parts.push(format!("{name}={}", fmt_f64(v)));
        }
        parts.join(" ")
    }

    /// Parse a record produced by [`CameraModel::to_record`].
    pub fn from_record(s: &str) -> Result<Self, GeometryError> {
        let get = |key: &str| -> Result<f64, GeometryError> {
            for part in s.split_whitespace() {
                if let Some(v) = part.strip_prefix(key).and_then(|p| p.strip_prefix('=')) {
                    return parse_f64(v).map_err(GeometryError::BadRecord);
                }
            }
            Err(GeometryError::BadRecord(format!("missing key {key}")))
        };
        let (fx, fy, cx, cy) = (get("fx")?, get("fy")?, get("cx")?, get("cy")?);
        let mut r = Matrix3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                r[(row, col)] = get(&format!("r{row}{col}"))?;
            }
        }
        let t = Vec3::new(get("tx")?, get("ty")?, get("tz")?);
        Self::new(fx, fy, cx, cy, RigidTransform::new(r, t)?)
    }
}

/// Build a camera-to-global pose from a position, a heading yaw, and a
/// downward pitch, using the crate's axis conventions.
///
/// With `yaw = 0, pitch_down = 0` the optical axis points along global +x;
/// `pitch_down = π/2` points it straight down (nadir).
pub fn camera_pose_from_yaw_pitch(position: Vec3, yaw: f64, pitch_down: f64) -> RigidTransform {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch_down.sin_cos();
    let forward = Vec3::new(cp * cy, cp * sy, -sp);
    let right = Vec3::new(sy, -cy, 0.0);
    let down = forward.cross(&right);
    let rotation = Matrix3::from_columns(&[right, down, forward]);
    RigidTransform::new_unchecked(rotation, position)
}

/// A 2D object proposal with its depth priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelProposal {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
    /// Predicted global (world-frame) height of the target, meters.
    pub predicted_global_height: Option<f64>,
    /// Predicted camera-frame depth of the target, meters.
    pub predicted_depth: Option<f64>,
}

impl PixelProposal {
    pub fn new(
        u: f64,
        v: f64,
        confidence: f64,
        predicted_global_height: Option<f64>,
        predicted_depth: Option<f64>,
    ) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidProposal("confidence outside [0,1]"));
        }
        if predicted_global_height.is_none() && predicted_depth.is_none() {
            return Err(GeometryError::InvalidProposal(
                "needs a height or depth prediction",
            ));
        }
        Ok(Self {
            u,
            v,
            confidence,
            predicted_global_height,
            predicted_depth,
        })
    }
}

/// Which depth source to use when lifting a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftStrategy {
    /// Derive depth from a predicted global height (high-vantage cameras).
    HeightDerived,
    /// Use a directly regressed depth (ground-level cameras).
    DirectDepth,
}

/// Un-project a pixel to its unit-depth ray in the camera frame.
///
/// Returns `K⁻¹·[u, v, 1]ᵀ`; the z-component is exactly 1.
pub fn unproject_pixel(cam: &CameraModel, u: f64, v: f64) -> Vec3 {
    Vec3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0)
}

/// Project a global-frame point through the camera.
///
/// Returns `(u, v, depth)` where `depth` is the camera-frame z.
pub fn project_point(cam: &CameraModel, point_glb: Vec3) -> Result<(f64, f64, f64), GeometryError> {
    let p_cam = cam.pose_cam2glb.inverse().apply(point_glb);
    if p_cam.z <= 1e-9 {
        return Err(GeometryError::BehindCamera { z_cam: p_cam.z });
    }
    let u = cam.fx * p_cam.x / p_cam.z + cam.cx;
    let v = cam.fy * p_cam.y / p_cam.z + cam.cy;
    Ok((u, v, p_cam.z))
}

/// Virtual-frame z-component of the unit-depth ray through pixel `(u, v)`.
///
/// The virtual frame shares the camera center but has axes parallel to the
/// global frame, so this is just the pixel ray rotated by the rotation block
/// of the camera-to-global pose.
pub fn ray_z_virt(cam: &CameraModel, u: f64, v: f64) -> f64 {
    let ray = unproject_pixel(cam, u, v);
    (cam.pose_cam2glb.rotation() * ray).z
}

/// Solve for camera-frame depth from a predicted global height.
///
/// ```text
/// depth = (z_target_glb − z_camera_glb) / z_virt(ray)
/// ```
///
/// Fails with [`GeometryError::DegenerateGeometry`] for near-horizontal rays
/// (`|z_virt| <` [`DEGENERACY_EPS`]) and with [`GeometryError::NegativeDepth`]
/// when the ray points away from the target height plane.
pub fn height_derived_depth(
    cam: &CameraModel,
    u: f64,
    v: f64,
    z_q_glb: f64,
) -> Result<f64, GeometryError> {
    let z_virt = ray_z_virt(cam, u, v);
    if z_virt.abs() < DEGENERACY_EPS {
        return Err(GeometryError::DegenerateGeometry {
            z_virt_abs: z_virt.abs(),
            eps: DEGENERACY_EPS,
        });
    }
    let depth = (z_q_glb - cam.center_glb().z) / z_virt;
    if depth <= 0.0 {
        return Err(GeometryError::NegativeDepth { depth });
    }
    Ok(depth)
}

/// Lift a 2D proposal to a 3D point in an agent's local frame.
///
/// The pixel ray is scaled by the strategy's depth (height-derived or
/// directly predicted), mapped to the global frame through the camera pose,
/// and then into the agent frame through `agent_from_glb`.
pub fn lift_proposal(
    cam: &CameraModel,
    prop: &PixelProposal,
    strategy: LiftStrategy,
    agent_from_glb: &RigidTransform,
) -> Result<Vec3, GeometryError> {
    let depth = match strategy {
        LiftStrategy::HeightDerived => {
            let z_glb = prop
                .predicted_global_height
                .ok_or(GeometryError::MissingPrediction {
                    strategy,
                    field: "predicted_global_height",
                })?;
            height_derived_depth(cam, prop.u, prop.v, z_glb)?
        }
        LiftStrategy::DirectDepth => {
            prop.predicted_depth.ok_or(GeometryError::MissingPrediction {
                strategy,
                field: "predicted_depth",
            })?
        }
    };
    let p_cam = unproject_pixel(cam, prop.u, prop.v) * depth;
    let p_glb = cam.pose_cam2glb.apply(p_cam);
    Ok(agent_from_glb.apply(p_glb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let pitch = rng.random_range(-1.5..1.5);
        camera_pose_from_yaw_pitch(
            Vec3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            ),
            yaw,
            pitch,
        )
    }

    fn nadir_camera(height: f64) -> CameraModel {
        // Straight down: camera x → global x, y → global −y, z → global −z.
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let pose = RigidTransform::new(r, Vec3::new(0.0, 0.0, height)).unwrap();
        CameraModel::new(1000.0, 1000.0, 960.0, 540.0, pose).unwrap()
    }

    #[test]
    fn identity_compose_is_neutral() {
        let mut rng = crate::seeds::rng(11);
        let t = random_transform(&mut rng);
        let id = RigidTransform::identity();
        let p = Vec3::new(1.0, -2.0, 3.0);
        assert_eq!(id.compose(&t).apply(p), t.apply(p));
        assert_eq!(t.compose(&id).apply(p), t.apply(p));
    }

    #[test]
    fn inverse_compose_is_identity() {
        let mut rng = crate::seeds::rng(12);
        for _ in 0..20 {
            let t = random_transform(&mut rng);
            let round = t.compose(&t.inverse());
            assert!(round.rotation_error() < 1e-9);
            let p = Vec3::new(4.0, 5.0, -6.0);
            assert_relative_eq!(round.apply(p), p, epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_matches_pointwise_application() {
        let mut rng = crate::seeds::rng(13);
        for _ in 0..10 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let ab = a.compose(&b);
            for _ in 0..100 {
                let p = Vec3::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                );
                assert_relative_eq!(ab.apply(p), a.apply(b.apply(p)), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn invalid_rotation_rejected() {
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(
            RigidTransform::new(bad, Vec3::zeros()).unwrap_err(),
            GeometryError::InvalidRotation
        );
        // Determinant −1 (reflection) is also invalid.
        let refl = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert_eq!(
            RigidTransform::new(refl, Vec3::zeros()).unwrap_err(),
            GeometryError::InvalidRotation
        );
    }

    #[test]
    fn unproject_principal_point_is_principal_ray() {
        let cam = nadir_camera(10.0);
        assert_eq!(unproject_pixel(&cam, 960.0, 540.0), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn unproject_one_focal_length_off_axis() {
        let cam = CameraModel::new(
            1000.0,
            1000.0,
            960.0,
            540.0,
            RigidTransform::identity(),
        )
        .unwrap();
        assert_eq!(unproject_pixel(&cam, 1960.0, 540.0), Vec3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn project_axial_point() {
        let cam = CameraModel::new(800.0, 820.0, 640.0, 360.0, RigidTransform::identity()).unwrap();
        let (u, v, depth) = project_point(&cam, Vec3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((u, v, depth), (640.0, 360.0, 5.0));
    }

    #[test]
    fn project_behind_camera_errors() {
        let cam = CameraModel::new(800.0, 800.0, 640.0, 360.0, RigidTransform::identity()).unwrap();
        match project_point(&cam, Vec3::new(0.0, 0.0, -1.0)) {
            Err(GeometryError::BehindCamera { .. }) => {}
            other => panic!("expected BehindCamera, got {other:?}"),
        }
    }

    #[test]
    fn project_unproject_round_trip() {
        let mut rng = crate::seeds::rng(21);
        for _ in 0..50 {
            let pose = random_transform(&mut rng);
            let cam = CameraModel::new(900.0, 950.0, 640.0, 360.0, pose).unwrap();
            let u = rng.random_range(0.0..1280.0);
            let v = rng.random_range(0.0..720.0);
            let depth = rng.random_range(0.5..100.0);
            let ray = unproject_pixel(&cam, u, v);
            let p_glb = cam.pose_cam2glb.apply(ray * depth);
            let (u2, v2, d2) = project_point(&cam, p_glb).unwrap();
            assert_relative_eq!(u2, u, epsilon = 1e-6);
            assert_relative_eq!(v2, v, epsilon = 1e-6);
            assert_relative_eq!(d2, depth, max_relative = 1e-9);
        }
    }

    #[test]
    fn nadir_height_derived_depth() {
        let cam = nadir_camera(10.0);
        // Principal ray points straight down: z_virt = −1, target height 0.
        assert_relative_eq!(ray_z_virt(&cam, 960.0, 540.0), -1.0);
        let depth = height_derived_depth(&cam, 960.0, 540.0, 0.0).unwrap();
        assert_relative_eq!(depth, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn forty_five_degree_height_derived_depth() {
        let pose = camera_pose_from_yaw_pitch(
            Vec3::new(0.0, 0.0, 10.0),
            0.0,
            std::f64::consts::FRAC_PI_4,
        );
        let cam = CameraModel::new(1000.0, 1000.0, 960.0, 540.0, pose).unwrap();
        let depth = height_derived_depth(&cam, 960.0, 540.0, 0.0).unwrap();
        assert_relative_eq!(depth, 10.0 * 2.0_f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn horizon_ray_is_degenerate() {
        let pose = camera_pose_from_yaw_pitch(Vec3::new(0.0, 0.0, 1.5), 0.0, 0.0);
        let cam = CameraModel::new(1000.0, 1000.0, 960.0, 540.0, pose).unwrap();
        match height_derived_depth(&cam, 960.0, 540.0, 0.0) {
            Err(GeometryError::DegenerateGeometry { .. }) => {}
            other => panic!("expected DegenerateGeometry, got {other:?}"),
        }
    }

    #[test]
    fn negative_depth_when_ray_points_away_from_plane() {
        // Camera at 10 m looking straight down, but asked for a target at 20 m.
        let cam = nadir_camera(10.0);
        match height_derived_depth(&cam, 960.0, 540.0, 20.0) {
            Err(GeometryError::NegativeDepth { .. }) => {}
            other => panic!("expected NegativeDepth, got {other:?}"),
        }
    }

    #[test]
    fn degeneracy_guard_boundary() {
        // Construct rays with |z_virt| just inside and outside the guard.
        for sign in [-1.0f64, 1.0] {
            for (factor, expect_err) in [(1.0 - 1e-3, true), (1.0 + 1e-3, false)] {
                let z_virt = sign * DEGENERACY_EPS * factor;
                // Pitch the camera so the principal ray has exactly this z_virt.
                let pitch_down = -z_virt.asin();
                let pose =
                    camera_pose_from_yaw_pitch(Vec3::new(0.0, 0.0, 30.0), 0.0, pitch_down);
                let cam = CameraModel::new(1000.0, 1000.0, 960.0, 540.0, pose).unwrap();
                assert_relative_eq!(ray_z_virt(&cam, 960.0, 540.0), z_virt, epsilon = 1e-12);
                let res = height_derived_depth(&cam, 960.0, 540.0, 0.0);
                match res {
                    Err(GeometryError::DegenerateGeometry { .. }) => {
                        assert!(expect_err, "unexpected degeneracy at z_virt={z_virt}")
                    }
                    _ => assert!(!expect_err, "missed degeneracy at z_virt={z_virt}"),
                }
            }
        }
    }

    #[test]
    fn height_derived_depth_matches_projection_oracle() {
        let mut rng = crate::seeds::rng(31);
        for _ in 0..200 {
            // High-vantage pose: well above the ground, pitched firmly down.
            let pose = camera_pose_from_yaw_pitch(
                Vec3::new(
                    rng.random_range(-40.0..40.0),
                    rng.random_range(-40.0..40.0),
                    rng.random_range(10.0..60.0),
                ),
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.random_range(0.35..1.2),
            );
            let cam = CameraModel::new(1200.0, 1180.0, 960.0, 540.0, pose).unwrap();
            let u = rng.random_range(200.0..1700.0);
            let v = rng.random_range(100.0..1000.0);
            let depth = rng.random_range(5.0..200.0);
            let p_glb = cam.pose_cam2glb.apply(unproject_pixel(&cam, u, v) * depth);
            if ray_z_virt(&cam, u, v).abs() < 1e-2 {
                continue;
            }
            let recovered = height_derived_depth(&cam, u, v, p_glb.z).unwrap();
            assert_relative_eq!(recovered, depth, max_relative = 1e-9);
        }
    }

    #[test]
    fn height_derived_depth_invariant_to_global_yaw() {
        // Rotating the global frame about z preserves global heights,
        // so the derived depth must not change.
        let mut rng = crate::seeds::rng(32);
        for _ in 0..50 {
            let pose = camera_pose_from_yaw_pitch(
                Vec3::new(5.0, -3.0, 25.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.3..1.3),
            );
            let cam = CameraModel::new(1000.0, 1000.0, 960.0, 540.0, pose).unwrap();
            let frame_rot = RigidTransform::from_yaw_translation(rng.random_range(-3.0..3.0), Vec3::zeros());
            let rotated_pose = frame_rot.compose(&cam.pose_cam2glb);
            let cam2 = CameraModel::new(1000.0, 1000.0, 960.0, 540.0, rotated_pose).unwrap();
            let (u, v) = (rng.random_range(400.0..1500.0), rng.random_range(200.0..900.0));
            let d1 = height_derived_depth(&cam, u, v, 0.0);
            let d2 = height_derived_depth(&cam2, u, v, 0.0);
            match (d1, d2) {
                (Ok(a), Ok(b)) => assert_relative_eq!(a, b, max_relative = 1e-9),
                (a, b) => panic!("inconsistent results: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn depth_monotone_in_height_drop() {
        // Fixed downward ray: depth strictly increases with the drop from
        // camera height to target height.
        let pose = camera_pose_from_yaw_pitch(Vec3::new(0.0, 0.0, 40.0), 0.3, 0.7);
        let cam = CameraModel::new(1000.0, 1000.0, 960.0, 540.0, pose).unwrap();
        let mut last = 0.0;
        for drop in [5.0, 10.0, 20.0, 35.0, 39.0] {
            let depth = height_derived_depth(&cam, 1100.0, 700.0, 40.0 - drop).unwrap();
            assert!(depth > last, "depth {depth} not increasing at drop {drop}");
            last = depth;
        }
    }

    #[test]
    fn lift_direct_depth_identity_frames() {
        let cam = CameraModel::new(1000.0, 1000.0, 960.0, 540.0, RigidTransform::identity()).unwrap();
        let prop = PixelProposal::new(960.0, 540.0, 1.0, None, Some(1.0)).unwrap();
        let p = lift_proposal(&cam, &prop, LiftStrategy::DirectDepth, &RigidTransform::identity())
            .unwrap();
        assert_relative_eq!(p, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn lift_height_derived_nadir() {
        let cam = nadir_camera(10.0);
        let prop = PixelProposal::new(960.0, 540.0, 1.0, Some(0.0), None).unwrap();
        let p = lift_proposal(
            &cam,
            &prop,
            LiftStrategy::HeightDerived,
            &RigidTransform::identity(),
        )
        .unwrap();
        // Point directly 10 m below the camera.
        assert_relative_eq!(p, Vec3::new(0.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!((cam.center_glb() - p).norm(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn lift_missing_prediction() {
        let cam = nadir_camera(10.0);
        let prop = PixelProposal::new(960.0, 540.0, 1.0, Some(0.0), None).unwrap();
        match lift_proposal(
            &cam,
            &prop,
            LiftStrategy::DirectDepth,
            &RigidTransform::identity(),
        ) {
            Err(GeometryError::MissingPrediction { .. }) => {}
            other => panic!("expected MissingPrediction, got {other:?}"),
        }
    }

    #[test]
    fn lift_round_trip_both_strategies() {
        let mut rng = crate::seeds::rng(33);
        for _ in 0..100 {
            let agent_pose = random_transform(&mut rng);
            let cam_pose = camera_pose_from_yaw_pitch(
                Vec3::new(
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-30.0..30.0),
                    rng.random_range(15.0..50.0),
                ),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.4..1.1),
            );
            let cam = CameraModel::new(1000.0, 1000.0, 960.0, 540.0, cam_pose).unwrap();
            let u = rng.random_range(300.0..1600.0);
            let v = rng.random_range(150.0..950.0);
            let depth = rng.random_range(2.0..150.0);
            let p_glb = cam.pose_cam2glb.apply(unproject_pixel(&cam, u, v) * depth);
            if ray_z_virt(&cam, u, v).abs() < 1e-2 {
                continue;
            }
            let p_agent = agent_pose.inverse().apply(p_glb);
            for (strategy, prop) in [
                (
                    LiftStrategy::HeightDerived,
                    PixelProposal::new(u, v, 1.0, Some(p_glb.z), None).unwrap(),
                ),
                (
                    LiftStrategy::DirectDepth,
                    PixelProposal::new(u, v, 1.0, None, Some(depth)).unwrap(),
                ),
            ] {
                let lifted =
                    lift_proposal(&cam, &prop, strategy, &agent_pose.inverse()).unwrap();
                assert_relative_eq!(lifted, p_agent, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn camera_record_round_trip() {
        let pose = camera_pose_from_yaw_pitch(Vec3::new(1.5, -2.25, 30.0), 0.7, 0.9);
        let cam = CameraModel::new(1234.5, 1100.25, 959.5, 539.5, pose).unwrap();
        let rec = cam.to_record();
        let back = CameraModel::from_record(&rec).unwrap();
        assert_eq!(cam, back);
    }
}
