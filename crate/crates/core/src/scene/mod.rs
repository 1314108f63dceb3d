//! Synthetic multi-agent scenes.
//!
//! A scene is a set of ground-truth objects on the z=0 ground plane plus a
//! list of sensing agents. Each agent observes the scene into a list of
//! sparse [`Query`] hypotheses with range-dependent position noise, detection
//! dropouts, and noisy semantic descriptors. Localization error is modeled
//! separately by perturbing an agent's *believed* pose before its queries are
//! projected into the ego frame, which produces exactly the lever-arm-scaled
//! positional mismatch that makes long-range association hard.

mod file;

pub use file::{load_scene_file, read_scene, save_scene_file, write_scene, SceneFile};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geometry::{CameraModel, GeometryError, RigidTransform, Vec3};
use crate::seeds;

/// Minimum center separation enforced between generated objects, meters.
pub const MIN_SEPARATION: f64 = 2.0;
/// Rejection-sampling budget per object during placement.
pub const MAX_PLACEMENT_TRIES: usize = 1000;
/// Mean car-like object size (length, width, height), meters.
pub const MEAN_OBJECT_SIZE: [f64; 3] = [4.5, 1.9, 1.6];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("could not place object {index} after {attempts} attempts (extent {extent} m, min separation {min_sep} m)")]
    PlacementFailure {
        index: usize,
        attempts: usize,
        extent: f64,
        min_sep: f64,
    },
    #[error("invalid agent {agent_id}: {reason}")]
    InvalidAgent { agent_id: u32, reason: &'static str },
    #[error("invalid scene parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("scene file, line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u64,
    pub class_id: u32,
    /// Geometric center in the global frame, meters.
    pub center_glb: Vec3,
    /// Length, width, height, meters.
    pub size: Vec3,
}

/// Sensor vantage class; decides which depth source the agent would use when
/// lifting its 2D proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vantage {
    /// Elevated sensor (roadside unit, drone): height-derived depth is stable.
    HighVantage,
    /// Ground-level sensor (vehicle): near-horizon rays force direct depth.
    GroundLevel,
}

/// A sensing agent: true pose, camera, and observation characteristics.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub agent_id: u32,
    /// True agent-to-global pose.
    pub pose_glb: RigidTransform,
    pub camera: CameraModel,
    pub vantage: Vantage,
    /// Detection range limit, meters.
    pub max_range: f64,
    /// Half-angle of the field of view around the camera axis, radians.
    pub fov_half_angle: f64,
    /// Detection probability for targets at zero range, in [0, 1].
    pub detect_prob_base: f64,
    /// Position noise at zero range, meters (per-axis std).
    pub obs_noise_base: f64,
    /// Additional per-axis position noise per meter of range.
    pub obs_noise_per_meter: f64,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let err = |reason| SceneError::InvalidAgent {
            agent_id: self.agent_id,
            reason,
        };
        if !(self.max_range > 0.0) {
            return Err(err("max_range must be > 0"));
        }
        if !(self.fov_half_angle > 0.0 && self.fov_half_angle <= std::f64::consts::PI) {
            return Err(err("fov_half_angle must be in (0, pi]"));
        }
        if !(0.0..=1.0).contains(&self.detect_prob_base) {
            return Err(err("detect_prob_base must be in [0, 1]"));
        }
        if self.obs_noise_base < 0.0 || self.obs_noise_per_meter < 0.0 {
            return Err(err("noise parameters must be >= 0"));
        }
        Ok(())
    }
}

/// One sparse object hypothesis: the unit of transmission and association.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub owner_agent: u32,
    /// Position in the owner's local frame (until projected into ego).
    pub position: Vec3,
    pub size: Vec3,
    /// Semantic descriptor, unit norm, dimension fixed per run.
    pub descriptor: Vec<f64>,
    pub confidence: f64,
    /// Simulation label for evaluation; matchers never score on it.
    pub gt_object_id: Option<u64>,
}

/// Localization-noise magnitudes for pose perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Per-axis std of planar (x, y) translation error, meters.
    pub sigma_translation: f64,
    /// Std of yaw error, degrees.
    pub sigma_rotation_deg: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        sigma_translation: 0.0,
        sigma_rotation_deg: 0.0,
    };

    pub fn new(sigma_translation: f64, sigma_rotation_deg: f64) -> Self {
        Self {
            sigma_translation,
            sigma_rotation_deg,
        }
    }
}

/// Ego-centered region of interest; membership is tested on the xy-plane and
/// the boundary is closed (centers exactly on it are inside).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Roi {
    Square { center: Vec3, half_extent: f64 },
    Circle { center: Vec3, radius: f64 },
}

impl Roi {
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Roi::Square {
                center,
                half_extent,
            } => (p.x - center.x).abs() <= half_extent && (p.y - center.y).abs() <= half_extent,
            Roi::Circle { center, radius } => {
                let dx = p.x - center.x;
                let dy = p.y - center.y;
                (dx * dx + dy * dy).sqrt() <= radius
            }
        }
    }
}

/// How descriptors are synthesized during observation.
///
/// A query descriptor is the unit-normalized sum of a class embedding, an
/// object-identity embedding, and per-observation Gaussian noise. Identity
/// embeddings are shared across agents observing the same object, which is
/// what makes descriptors informative for association.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorConfig {
    pub dim: usize,
    /// Per-component std of the per-observation perturbation.
    pub noise_sigma: f64,
    /// Weight of the class embedding relative to the identity embedding.
    pub class_weight: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            noise_sigma: 0.1,
            class_weight: 0.5,
        }
    }
}

/// A generated scene: objects, agents, and the descriptor model.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub agents: Vec<AgentConfig>,
    pub descriptor: DescriptorConfig,
    /// Seed the scene was generated from (metadata; not re-used internally).
    pub seed: u64,
}

impl Scene {
    pub fn agent(&self, agent_id: u32) -> Option<&AgentConfig> {
        self.agents.iter().find(|a| a.agent_id == agent_id)
    }
}

/// Generate a scene with `n_objects` objects placed uniformly in the square
/// `[-extent, extent]²` with at least [`MIN_SEPARATION`] between centers.
///
/// Deterministic for a given seed. Object sizes are car-like draws around
/// [`MEAN_OBJECT_SIZE`]; object centers sit on the ground plane (z = half
/// height).
pub fn generate_scene(
    n_objects: usize,
    extent: f64,
    agents: Vec<AgentConfig>,
    seed: u64,
) -> Result<Scene, SceneError> {
    if !(extent > 0.0) {
        return Err(SceneError::InvalidParameter("extent must be > 0"));
    }
    for agent in &agents {
        agent.validate()?;
    }
    let mut rng = seeds::rng(seeds::mix(seed, seeds::STREAM_PLACEMENT));
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
    for index in 0..n_objects {
        let size = Vec3::new(
            sample_clamped(&mut rng, MEAN_OBJECT_SIZE[0], 0.25),
            sample_clamped(&mut rng, MEAN_OBJECT_SIZE[1], 0.10),
            sample_clamped(&mut rng, MEAN_OBJECT_SIZE[2], 0.08),
        );
        let class_id = rng.random_range(0..3u32);
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let center = Vec3::new(
                rng.random_range(-extent..=extent),
                rng.random_range(-extent..=extent),
                size.z / 2.0,
            );
            if objects
                .iter()
                .all(|o| (o.center_glb - center).norm() >= MIN_SEPARATION)
            {
                objects.push(SceneObject {
                    id: index as u64,
                    class_id,
                    center_glb: center,
                    size,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SceneError::PlacementFailure {
                index,
                attempts: MAX_PLACEMENT_TRIES,
                extent,
                min_sep: MIN_SEPARATION,
            });
        }
    }
    Ok(Scene {
        objects,
        agents,
        descriptor: DescriptorConfig::default(),
        seed,
    })
}

fn sample_clamped(rng: &mut impl Rng, mean: f64, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (mean + sigma * z).max(mean * 0.5)
}

/// Deterministic unit embedding for a class or object identity.
fn unit_embedding(kind: u64, id: u64, dim: usize) -> Vec<f64> {
    let mut rng = seeds::rng(seeds::mix2(0xE3B0_C442_98FC_1C14, kind, id));
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Deterministic visibility predicate: within range of the agent origin and
/// within the camera's field-of-view cone. Detection dropouts are applied on
/// top of this in [`observe`].
pub fn is_visible(agent: &AgentConfig, object: &SceneObject) -> bool {
    let range = (object.center_glb - agent.pose_glb.translation()).norm();
    if range > agent.max_range {
        return false;
    }
    let to_obj = object.center_glb - agent.camera.center_glb();
    let dist = to_obj.norm();
    if dist < 1e-12 {
        return true;
    }
    let cosang = agent.camera.forward_axis_glb().dot(&to_obj) / dist;
    cosang.clamp(-1.0, 1.0).acos() <= agent.fov_half_angle
}

/// Observe a scene from one agent into a list of queries.
///
/// An object is detected iff it passes [`is_visible`] and a Bernoulli draw
/// with probability `detect_prob_base · clamp(1 − range/max_range · 0.5, 0, 1)`.
/// Detected objects yield a query whose position is the true agent-frame
/// position plus per-axis Gaussian noise of std
/// `obs_noise_base + obs_noise_per_meter · range`, whose confidence decays
/// linearly from 1.0 at zero range to 0.5 at `max_range`, and whose
/// descriptor follows the scene's [`DescriptorConfig`].
///
/// Each object draws from its own sub-stream of `seed`, so one object's
/// observation is independent of which other objects are present.
pub fn observe(scene: &Scene, agent: &AgentConfig, seed: u64) -> Vec<Query> {
    let glb_to_agent = agent.pose_glb.inverse();
    let mut queries = Vec::new();
    for object in &scene.objects {
        let mut rng = seeds::rng(seeds::mix2(seed, object.id, 0x0B5E));
        if !is_visible(agent, object) {
            continue;
        }
        let range = (object.center_glb - agent.pose_glb.translation()).norm();
        let p_detect =
            agent.detect_prob_base * (1.0 - 0.5 * range / agent.max_range).clamp(0.0, 1.0);
        if rng.random_range(0.0..1.0) >= p_detect {
            continue;
        }
        let sigma = agent.obs_noise_base + agent.obs_noise_per_meter * range;
        let mut position = glb_to_agent.apply(object.center_glb);
        for axis in 0..3 {
            let z: f64 = StandardNormal.sample(&mut rng);
            position[axis] += sigma * z;
        }
        let cfg = &scene.descriptor;
        let class_emb = unit_embedding(1, object.class_id as u64, cfg.dim);
        let id_emb = unit_embedding(2, object.id, cfg.dim);
        let mut descriptor: Vec<f64> = (0..cfg.dim)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                cfg.class_weight * class_emb[i] + id_emb[i] + cfg.noise_sigma * z
            })
            .collect();
        let norm = descriptor.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        descriptor.iter_mut().for_each(|x| *x /= norm);
        queries.push(Query {
            owner_agent: agent.agent_id,
            position,
            size: object.size,
            descriptor,
            confidence: 1.0 - 0.5 * range / agent.max_range,
            gt_object_id: Some(object.id),
        });
    }
    queries
}

/// Observe the scene from every agent, deriving one observation stream per
/// agent from `seed`.
pub fn observe_all(scene: &Scene, seed: u64) -> Vec<(u32, Vec<Query>)> {
    scene
        .agents
        .iter()
        .map(|agent| {
            let s = seeds::mix2(seed, seeds::STREAM_OBSERVE, agent.agent_id as u64);
            (agent.agent_id, observe(scene, agent, s))
        })
        .collect()
}

/// Inject localization noise into a pose: planar Gaussian translation error
/// on x and y, and a Gaussian yaw error applied as a global pre-rotation.
pub fn perturb_pose(pose: &RigidTransform, noise: &NoiseSpec, seed: u64) -> RigidTransform {
    let mut rng = seeds::rng(seeds::mix(seed, seeds::STREAM_POSE_NOISE));
    let dx: f64 = {
        let z: f64 = StandardNormal.sample(&mut rng);
        noise.sigma_translation * z
    };
    let dy: f64 = {
        let z: f64 = StandardNormal.sample(&mut rng);
        noise.sigma_translation * z
    };
    let yaw: f64 = {
        let z: f64 = StandardNormal.sample(&mut rng);
        noise.sigma_rotation_deg.to_radians() * z
    };
    let rotation = crate::geometry::yaw_matrix(yaw) * pose.rotation();
    let translation = pose.translation() + Vec3::new(dx, dy, 0.0);
    RigidTransform::new_unchecked(rotation, translation)
}

/// Project cooperative queries into the ego frame using the cooperative
/// agent's *believed* pose.
///
/// When the believed pose carries localization error, every projected
/// position is displaced by exactly the rigid-body mismatch between believed
/// and true pose — constant for translation error, lever-arm-scaled for yaw
/// error.
pub fn project_queries_to_ego(
    queries: &[Query],
    believed_coop_pose: &RigidTransform,
    ego_pose: &RigidTransform,
) -> Vec<Query> {
    let rel = ego_pose.inverse().compose(believed_coop_pose);
    queries
        .iter()
        .map(|q| {
            let mut out = q.clone();
            out.position = rel.apply(q.position);
            out
        })
        .collect()
}

/// Union of ego and cooperative ground truth, in the ego frame, filtered to a
/// region of interest.
///
/// Objects are keyed by id; when both sides annotate the same object the ego
/// annotation wins. Cooperative centers are transformed by `coop_to_ego`
/// before the ROI filter. The ROI boundary is closed.
pub fn gt_union(
    gt_ego: &[SceneObject],
    gt_coop: &[SceneObject],
    coop_to_ego: &RigidTransform,
    roi: &Roi,
) -> Vec<SceneObject> {
    let mut by_id: BTreeMap<u64, SceneObject> = BTreeMap::new();
    for obj in gt_coop {
        let mut o = obj.clone();
        o.center_glb = coop_to_ego.apply(o.center_glb);
        by_id.insert(o.id, o);
    }
    for obj in gt_ego {
        by_id.insert(obj.id, obj.clone());
    }
    by_id
        .into_values()
        .filter(|o| roi.contains(o.center_glb))
        .collect()
}

/// Visibility taxonomy of one ground-truth object with respect to the ego
/// agent and the cooperative agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VisibilityTag {
    /// Detected by the ego agent and by at least one cooperative agent.
    CoVisible,
    /// Within the ego field of view and range but undetected by ego;
    /// detected by a cooperative agent.
    EgoMissed,
    /// Outside the ego field of view or range; detected by a cooperative agent.
    EgoInvisible,
    /// Detected by the ego agent only.
    EgoOnly,
    /// Detected by nobody.
    Undetected,
}

/// Classify every scene object by who saw it.
pub fn label_visibility(
    scene: &Scene,
    ego: &AgentConfig,
    ego_queries: &[Query],
    coop_queries: &[Vec<Query>],
) -> BTreeMap<u64, VisibilityTag> {
    let ego_detected: std::collections::BTreeSet<u64> =
        ego_queries.iter().filter_map(|q| q.gt_object_id).collect();
    let coop_detected: std::collections::BTreeSet<u64> = coop_queries
        .iter()
        .flat_map(|qs| qs.iter().filter_map(|q| q.gt_object_id))
        .collect();
    scene
        .objects
        .iter()
        .map(|object| {
            let by_ego = ego_detected.contains(&object.id);
            let by_coop = coop_detected.contains(&object.id);
            let tag = match (by_ego, by_coop) {
                (true, true) => VisibilityTag::CoVisible,
                (true, false) => VisibilityTag::EgoOnly,
                (false, true) => {
                    if is_visible(ego, object) {
                        VisibilityTag::EgoMissed
                    } else {
                        VisibilityTag::EgoInvisible
                    }
                }
                (false, false) => VisibilityTag::Undetected,
            };
            (object.id, tag)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera_pose_from_yaw_pitch;
    use approx::assert_relative_eq;

    pub(crate) fn test_agent(agent_id: u32, pos: Vec3, yaw: f64, pitch_down: f64) -> AgentConfig {
        let pose = RigidTransform::from_yaw_translation(yaw, pos);
        let cam_pose = camera_pose_from_yaw_pitch(pos, yaw, pitch_down);
        AgentConfig {
            agent_id,
            pose_glb: pose,
            camera: CameraModel::new(1000.0, 1000.0, 960.0, 540.0, cam_pose).unwrap(),
            vantage: if pitch_down > 0.3 {
                Vantage::HighVantage
            } else {
                Vantage::GroundLevel
            },
            max_range: 100.0,
            fov_half_angle: std::f64::consts::PI,
            detect_prob_base: 1.0,
            obs_noise_base: 0.0,
            obs_noise_per_meter: 0.0,
        }
    }

    #[test]
    fn empty_scene() {
        let scene = generate_scene(0, 50.0, vec![], 1).unwrap();
        assert!(scene.objects.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(25, 80.0, vec![], 7).unwrap();
        let b = generate_scene(25, 80.0, vec![], 7).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(25, 80.0, vec![], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn min_separation_holds_exhaustively() {
        let scene = generate_scene(50, 100.0, vec![], 3).unwrap();
        assert_eq!(scene.objects.len(), 50);
        for i in 0..scene.objects.len() {
            for j in (i + 1)..scene.objects.len() {
                let d = (scene.objects[i].center_glb - scene.objects[j].center_glb).norm();
                assert!(d >= MIN_SEPARATION, "objects {i},{j} at distance {d}");
            }
        }
        for o in &scene.objects {
            assert!(o.center_glb.x.abs() <= 100.0 && o.center_glb.y.abs() <= 100.0);
            assert!(o.size.min() > 0.0);
        }
    }

    #[test]
    fn placement_failure_when_overpacked() {
        // 200 objects with 2 m separation cannot fit in a 4 m × 4 m box.
        match generate_scene(200, 2.0, vec![], 5) {
            Err(SceneError::PlacementFailure { .. }) => {}
            other => panic!("expected PlacementFailure, got {other:?}"),
        }
    }

    #[test]
    fn observe_skips_out_of_range_objects() {
        let agent = test_agent(0, Vec3::new(0.0, 0.0, 1.5), 0.0, 0.0);
        let mut scene = generate_scene(0, 10.0, vec![agent.clone()], 1).unwrap();
        scene.objects.push(SceneObject {
            id: 0,
            class_id: 0,
            center_glb: Vec3::new(150.0, 0.0, 0.8),
            size: Vec3::new(4.5, 1.9, 1.6),
        });
        assert!(observe(&scene, &agent, 9).is_empty());
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let agent = test_agent(0, Vec3::new(5.0, -2.0, 1.5), 0.4, 0.0);
        let scene = generate_scene(20, 40.0, vec![agent.clone()], 11).unwrap();
        let queries = observe(&scene, &agent, 13);
        // Full FOV, detect_prob_base heavily reduced only by the range ramp;
        // every in-range object should at least be considered.
        for q in &queries {
            let obj = &scene.objects[q.gt_object_id.unwrap() as usize];
            let expected = agent.pose_glb.inverse().apply(obj.center_glb);
            assert_relative_eq!(q.position, expected, epsilon = 1e-12);
            assert!((0.5..=1.0).contains(&q.confidence));
            let norm: f64 = q.descriptor.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_relative_eq!(norm, 1.0, epsilon = 1e-9);
        }
        assert!(!queries.is_empty());
    }

    #[test]
    fn observation_noise_ramp_matches_configured_sigma() {
        // One object at a known range; the sample std of the position error
        // over many seeds must match obs_noise_base + obs_noise_per_meter · r.
        let mut agent = test_agent(0, Vec3::new(0.0, 0.0, 0.0), 0.0, 0.0);
        agent.obs_noise_base = 0.2;
        agent.obs_noise_per_meter = 0.01;
        let r = 50.0;
        let mut scene = generate_scene(0, 10.0, vec![agent.clone()], 1).unwrap();
        scene.objects.push(SceneObject {
            id: 0,
            class_id: 0,
            center_glb: Vec3::new(r, 0.0, 0.0),
            size: Vec3::new(4.5, 1.9, 1.6),
        });
        let expected_sigma = 0.2 + 0.01 * r;
        let n = 10_000;
        let mut errs: Vec<[f64; 3]> = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            let qs = observe(&scene, &agent, seed);
            if let Some(q) = qs.first() {
                let truth = agent.pose_glb.inverse().apply(scene.objects[0].center_glb);
                let e = q.position - truth;
                errs.push([e.x, e.y, e.z]);
            }
        }
        assert!(errs.len() > n / 2);
        for axis in 0..3 {
            let mean = errs.iter().map(|e| e[axis]).sum::<f64>() / errs.len() as f64;
            let var = errs
                .iter()
                .map(|e| (e[axis] - mean).powi(2))
                .sum::<f64>()
                / (errs.len() - 1) as f64;
            let sigma = var.sqrt();
            assert!(
                (sigma - expected_sigma).abs() / expected_sigma < 0.05,
                "axis {axis}: sample sigma {sigma} vs expected {expected_sigma}"
            );
        }
    }

    #[test]
    fn perturb_zero_noise_is_identity() {
        let pose = RigidTransform::from_yaw_translation(0.7, Vec3::new(3.0, 4.0, 1.0));
        let out = perturb_pose(&pose, &NoiseSpec::NONE, 42);
        assert_eq!(pose, out);
    }

    #[test]
    fn perturb_yaw_std_matches_spec() {
        let pose = RigidTransform::identity();
        let noise = NoiseSpec::new(0.0, 4.0);
        let n = 10_000;
        let yaws: Vec<f64> = (0..n)
            .map(|s| {
                let p = perturb_pose(&pose, &noise, s as u64);
                p.yaw().to_degrees()
            })
            .collect();
        let mean = yaws.iter().sum::<f64>() / n as f64;
        let var = yaws.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        assert!((std - 4.0).abs() / 4.0 < 0.05, "yaw std {std}");
    }

    #[test]
    fn perturb_preserves_rotation_invariant() {
        let pose = RigidTransform::from_yaw_translation(1.2, Vec3::new(1.0, 2.0, 3.0));
        for seed in 0..100 {
            let p = perturb_pose(&pose, &NoiseSpec::new(1.0, 5.0), seed);
            assert!(p.rotation_error() <= 1e-9);
            // z untouched
            assert_eq!(p.translation().z, pose.translation().z);
        }
    }

    #[test]
    fn projection_with_true_pose_is_exact() {
        let coop = test_agent(1, Vec3::new(30.0, 10.0, 0.0), 1.0, 0.0);
        let ego = test_agent(0, Vec3::new(0.0, 0.0, 0.0), 0.0, 0.0);
        let scene = generate_scene(15, 40.0, vec![ego.clone(), coop.clone()], 21).unwrap();
        let queries = observe(&scene, &coop, 5);
        let projected = project_queries_to_ego(&queries, &coop.pose_glb, &ego.pose_glb);
        for (q, p) in queries.iter().zip(&projected) {
            let obj = &scene.objects[q.gt_object_id.unwrap() as usize];
            let expected = ego.pose_glb.inverse().apply(obj.center_glb);
            assert_relative_eq!(p.position, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn translation_error_shifts_projections_rigidly() {
        let coop_pose = RigidTransform::from_yaw_translation(0.9, Vec3::new(25.0, -10.0, 0.0));
        let ego_pose = RigidTransform::from_yaw_translation(-0.3, Vec3::new(1.0, 2.0, 0.0));
        let believed = RigidTransform::new_unchecked(
            *coop_pose.rotation(),
            coop_pose.translation() + Vec3::new(1.0, 0.0, 0.0),
        );
        let queries: Vec<Query> = (0..10)
            .map(|i| Query {
                owner_agent: 1,
                position: Vec3::new(i as f64 * 7.0, -3.0 * i as f64, 0.5),
                size: Vec3::new(4.0, 2.0, 1.5),
                descriptor: vec![0.0; 4],
                confidence: 1.0,
                gt_object_id: None,
            })
            .collect();
        let exact = project_queries_to_ego(&queries, &coop_pose, &ego_pose);
        let shifted = project_queries_to_ego(&queries, &believed, &ego_pose);
        let expected_offset = ego_pose.inverse().rotate(Vec3::new(1.0, 0.0, 0.0));
        for (a, b) in exact.iter().zip(&shifted) {
            assert_relative_eq!(b.position - a.position, expected_offset, epsilon = 1e-9);
        }
    }

    #[test]
    fn yaw_error_displacement_matches_lever_arm_law() {
        let ego_pose = RigidTransform::identity();
        let coop_pose = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.0));
        for theta_deg in [0.5f64, 1.0, 2.0] {
            let theta = theta_deg.to_radians();
            let believed = RigidTransform::new_unchecked(
                crate::geometry::yaw_matrix(theta) * coop_pose.rotation(),
                coop_pose.translation(),
            );
            for r in [10.0, 50.0, 100.0, 150.0] {
                let q = Query {
                    owner_agent: 1,
                    position: Vec3::new(r, 0.0, 0.0),
                    size: Vec3::new(1.0, 1.0, 1.0),
                    descriptor: vec![],
                    confidence: 1.0,
                    gt_object_id: None,
                };
                let exact = project_queries_to_ego(std::slice::from_ref(&q), &coop_pose, &ego_pose);
                let noisy = project_queries_to_ego(&[q], &believed, &ego_pose);
                let mismatch = (noisy[0].position - exact[0].position).norm();
                let law = 2.0 * r * (theta / 2.0).sin();
                assert_relative_eq!(mismatch, law, epsilon = 1e-6);
            }
        }
        // The documented numeric anchor: 1° yaw at 100 m lever arm ≈ 1.745 m.
        let believed = RigidTransform::new_unchecked(
            crate::geometry::yaw_matrix(1.0_f64.to_radians()),
            Vec3::zeros(),
        );
        let q = Query {
            owner_agent: 1,
            position: Vec3::new(100.0, 0.0, 0.0),
            size: Vec3::new(1.0, 1.0, 1.0),
            descriptor: vec![],
            confidence: 1.0,
            gt_object_id: None,
        };
        let noisy = project_queries_to_ego(std::slice::from_ref(&q), &believed, &ego_pose);
        let mismatch = (noisy[0].position - q.position).norm();
        assert!((mismatch - 1.745).abs() < 1e-3, "mismatch {mismatch}");
    }

    #[test]
    fn gt_union_disjoint_and_dedup() {
        let mk = |id, x| SceneObject {
            id,
            class_id: 0,
            center_glb: Vec3::new(x, 0.0, 0.8),
            size: Vec3::new(4.0, 2.0, 1.6),
        };
        let roi = Roi::Circle {
            center: Vec3::zeros(),
            radius: 100.0,
        };
        let id_t = RigidTransform::identity();
        // Disjoint sets concatenate.
        let u = gt_union(&[mk(0, 1.0)], &[mk(1, 2.0)], &id_t, &roi);
        assert_eq!(u.len(), 2);
        // Same id: ego annotation wins.
        let u = gt_union(&[mk(0, 1.0)], &[mk(0, 2.0)], &id_t, &roi);
        assert_eq!(u.len(), 1);
        assert_eq!(u[0].center_glb.x, 1.0);
    }

    #[test]
    fn gt_union_roi_boundary_is_closed() {
        let obj = SceneObject {
            id: 0,
            class_id: 0,
            center_glb: Vec3::new(50.0, 0.0, 0.8),
            size: Vec3::new(4.0, 2.0, 1.6),
        };
        let roi = Roi::Circle {
            center: Vec3::zeros(),
            radius: 50.0,
        };
        let u = gt_union(&[], std::slice::from_ref(&obj), &RigidTransform::identity(), &roi);
        assert_eq!(u.len(), 1);
        let roi_sq = Roi::Square {
            center: Vec3::zeros(),
            half_extent: 50.0,
        };
        let u = gt_union(&[obj], &[], &RigidTransform::identity(), &roi_sq);
        assert_eq!(u.len(), 1);
    }

    #[test]
    fn visibility_labels_match_brute_force_predicates() {
        let mut ego = test_agent(0, Vec3::new(-60.0, 0.0, 1.5), 0.0, 0.0);
        ego.max_range = 60.0;
        ego.fov_half_angle = 1.2;
        ego.detect_prob_base = 0.7;
        let drone = {
            let mut a = test_agent(1, Vec3::new(20.0, 5.0, 25.0), 3.0, 0.9);
            a.max_range = 200.0;
            a.detect_prob_base = 0.95;
            a
        };
        let scene = generate_scene(40, 70.0, vec![ego.clone(), drone.clone()], 77).unwrap();
        let ego_q = observe(&scene, &ego, 101);
        let coop_q = vec![observe(&scene, &drone, 102)];
        let labels = label_visibility(&scene, &ego, &ego_q, &coop_q);

        let mut saw = BTreeMap::new();
        for object in &scene.objects {
            let by_ego = ego_q.iter().any(|q| q.gt_object_id == Some(object.id));
            let by_coop = coop_q[0].iter().any(|q| q.gt_object_id == Some(object.id));
            let expected = match (by_ego, by_coop) {
                (true, true) => VisibilityTag::CoVisible,
                (true, false) => VisibilityTag::EgoOnly,
                (false, true) if is_visible(&ego, object) => VisibilityTag::EgoMissed,
                (false, true) => VisibilityTag::EgoInvisible,
                (false, false) => VisibilityTag::Undetected,
            };
            assert_eq!(labels[&object.id], expected, "object {}", object.id);
            *saw.entry(expected).or_insert(0usize) += 1;
        }
        // The config is chosen so the three interesting classes all occur.
        assert!(saw.get(&VisibilityTag::CoVisible).copied().unwrap_or(0) > 0);
        assert!(saw.get(&VisibilityTag::EgoMissed).copied().unwrap_or(0) > 0);
        assert!(saw.get(&VisibilityTag::EgoInvisible).copied().unwrap_or(0) > 0);
    }

    #[test]
    fn rigid_alignment_sanity_floor() {
        // With zero observation and localization noise, the projected coop
        // positions of a co-visible object coincide with ego observations.
        let ego = test_agent(0, Vec3::new(-20.0, 0.0, 1.5), 0.0, 0.0);
        let coop = test_agent(1, Vec3::new(20.0, 10.0, 1.5), 2.5, 0.0);
        let scene = generate_scene(25, 35.0, vec![ego.clone(), coop.clone()], 5).unwrap();
        let ego_q = observe(&scene, &ego, 50);
        let coop_q = observe(&scene, &coop, 51);
        let projected = project_queries_to_ego(&coop_q, &coop.pose_glb, &ego.pose_glb);
        let mut co_visible = 0;
        for eq in &ego_q {
            for cq in &projected {
                if eq.gt_object_id == cq.gt_object_id {
                    assert_relative_eq!(eq.position, cq.position, epsilon = 1e-9);
                    co_visible += 1;
                }
            }
        }
        assert!(co_visible > 0);
    }
}
