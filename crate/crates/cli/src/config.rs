//! Run configuration: a single TOML file, overridable leaf-by-leaf with
//! `--set dotted.path=value` flags.
//!
//! Every run writes the fully resolved configuration back out as
//! `manifest.toml` (plus a `[run]` section recording the subcommand), and any
//! manifest is itself a valid `--config` input, so runs can be reproduced
//! exactly from their manifests.

use serde::{Deserialize, Serialize};

use coopsense::eval::{
    CostModelConfig, DenseCostConfig, LiftNoiseModel, ScenarioConfig, SparseCostConfig,
    TrainingNoise,
};
use coopsense::geometry::{camera_pose_from_yaw_pitch, CameraModel, RigidTransform, Vec3};
use coopsense::matcher::{CaaConfig, CaaLossConfig, CaaMatchConfig, Matcher};
use coopsense::scene::{AgentConfig, DescriptorConfig, NoiseSpec, Roi, Vantage};

use crate::CliError;

fn default_true_confidence() -> f64 {
    0.95
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneSection,
    pub agents: Vec<AgentSection>,
    pub matchers: Vec<MatcherSection>,
    pub caa: CaaSection,
    pub train: TrainSection,
    pub noise: NoiseSection,
    pub lift: LiftSection,
    pub cost: CostSection,
    pub eval: EvalSection,
    /// Present in manifests only: records how the run was invoked.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub subcommand: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub n_objects: usize,
    pub extent: f64,
    /// Scene count for `gen-scenes` and generated-scene evaluation.
    pub n_scenes: usize,
    pub descriptor_dim: usize,
    pub descriptor_noise: f64,
    pub class_weight: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            n_objects: 35,
            extent: 20.0,
            n_scenes: 20,
            descriptor_dim: 32,
            descriptor_noise: 0.15,
            class_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pitch_down_deg: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self {
            fx: 1000.0,
            fy: 1000.0,
            cx: 960.0,
            cy: 540.0,
            pitch_down_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub id: u32,
    /// "ground" or "high".
    pub vantage: String,
    pub position: [f64; 3],
    pub yaw_deg: f64,
    pub max_range: f64,
    pub fov_half_angle_deg: f64,
    pub detect_prob_base: f64,
    pub obs_noise_base: f64,
    pub obs_noise_per_meter: f64,
    pub camera: CameraSection,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            id: 0,
            vantage: "ground".to_string(),
            position: [0.0, 0.0, 1.6],
            yaw_deg: 0.0,
            max_range: 100.0,
            fov_half_angle_deg: 180.0,
            detect_prob_base: default_true_confidence(),
            obs_noise_base: 0.15,
            obs_noise_per_meter: 0.012,
            camera: CameraSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherSection {
    /// "greedy", "hungarian", or "caa".
    pub kind: String,
    pub radius: f64,
    pub reject_threshold: f64,
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Default for MatcherSection {
    fn default() -> Self {
        Self {
            kind: "hungarian".to_string(),
            radius: 4.0,
            reject_threshold: 4.0,
            tau: 0.4,
            label: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CaaSection {
    pub layers: usize,
    pub heads: usize,
    pub temperature: f64,
    pub sinkhorn_iters: usize,
    /// Where `train` writes parameters and `eval`/`sweep-noise` read them.
    pub params_file: String,
}

impl Default for CaaSection {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 1,
            temperature: 0.1,
            sinkhorn_iters: 20,
            params_file: "caa.params".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub n_scenes: usize,
    pub max_sigma_t: f64,
    pub max_sigma_r_deg: f64,
    pub bce_weight: f64,
    /// Read scenes from files instead of generating them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_dir: Option<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.01,
            n_scenes: 150,
            max_sigma_t: 1.2,
            max_sigma_r_deg: 4.0,
            bce_weight: 0.25,
            scene_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub translation_grid: Vec<f64>,
    pub rotation_grid_deg: Vec<f64>,
    pub n_seeds: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            translation_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2],
            rotation_grid_deg: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            n_seeds: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LiftSection {
    pub height_sigma: f64,
    pub depth_sigma_base: f64,
    pub depth_sigma_per_meter: f64,
    pub n_seeds: usize,
    pub bucket_edges: Vec<f64>,
}

impl Default for LiftSection {
    fn default() -> Self {
        Self {
            height_sigma: 0.3,
            depth_sigma_base: 0.0,
            depth_sigma_per_meter: 0.05,
            n_seeds: 20,
            bucket_edges: vec![0.0, 50.0, 100.0, 150.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub dense_range_m: f64,
    pub dense_cell_m: f64,
    pub dense_channels: u32,
    pub dense_bytes_per_value: u32,
    pub sparse_n_queries: u32,
    pub sparse_bytes_per_query: u32,
    pub rate_hz: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        let reference = CostModelConfig::reference_calibration();
        Self {
            dense_range_m: reference.dense.range_m,
            dense_cell_m: reference.dense.cell_size_m,
            dense_channels: reference.dense.channels,
            dense_bytes_per_value: reference.dense.bytes_per_value,
            sparse_n_queries: reference.sparse.n_queries,
            sparse_bytes_per_query: reference.sparse.bytes_per_query,
            rate_hz: reference.rate_hz,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_scenes: usize,
    pub noise_sigma_t: f64,
    pub noise_sigma_r_deg: f64,
    pub roi_radius: f64,
    pub detection_match_radius: f64,
    /// Read scenes from files instead of generating them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_dir: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_scenes: 20,
            noise_sigma_t: 0.5,
            noise_sigma_r_deg: 1.0,
            roi_radius: 200.0,
            detection_match_radius: 2.0,
            scene_dir: None,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let ego = AgentSection {
            id: 0,
            vantage: "ground".to_string(),
            position: [-40.0, 0.0, 1.6],
            yaw_deg: 0.0,
            max_range: 70.0,
            fov_half_angle_deg: 180.0,
            detect_prob_base: 0.92,
            obs_noise_base: 0.15,
            obs_noise_per_meter: 0.03,
            camera: CameraSection::default(),
        };
        let drone = AgentSection {
            id: 1,
            vantage: "high".to_string(),
            position: [25.0, 5.0, 25.0],
            yaw_deg: 178.0,
            max_range: 180.0,
            fov_half_angle_deg: 69.0,
            detect_prob_base: 0.95,
            obs_noise_base: 0.1,
            obs_noise_per_meter: 0.012,
            camera: CameraSection {
                pitch_down_deg: 52.0,
                ..CameraSection::default()
            },
        };
        let matchers = vec![
            MatcherSection {
                kind: "greedy".to_string(),
                ..MatcherSection::default()
            },
            MatcherSection {
                kind: "hungarian".to_string(),
                ..MatcherSection::default()
            },
            MatcherSection {
                kind: "caa".to_string(),
                tau: 0.4,
                label: Some("caa-tau04".to_string()),
                ..MatcherSection::default()
            },
            MatcherSection {
                kind: "caa".to_string(),
                tau: 0.8,
                label: Some("caa-tau08".to_string()),
                ..MatcherSection::default()
            },
        ];
        Self {
            seed: 7,
            scene: SceneSection::default(),
            agents: vec![ego, drone],
            matchers,
            caa: CaaSection::default(),
            train: TrainSection::default(),
            noise: NoiseSection::default(),
            lift: LiftSection::default(),
            cost: CostSection::default(),
            eval: EvalSection::default(),
            run: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Resolve the agent list into core configs.
    pub fn agent_configs(&self) -> Result<Vec<AgentConfig>, CliError> {
        if self.agents.is_empty() {
            return Err(CliError::Config("at least one agent (the ego) required".into()));
        }
        self.agents
            .iter()
            .map(|a| {
                let vantage = match a.vantage.as_str() {
                    "ground" => Vantage::GroundLevel,
                    "high" => Vantage::HighVantage,
                    other => {
                        return Err(CliError::Config(format!(
                            "agent {}: unknown vantage {other:?} (use \"ground\" or \"high\")",
                            a.id
                        )))
                    }
                };
                let position = Vec3::new(a.position[0], a.position[1], a.position[2]);
                let yaw = a.yaw_deg.to_radians();
                let camera = CameraModel::new(
                    a.camera.fx,
                    a.camera.fy,
                    a.camera.cx,
                    a.camera.cy,
                    camera_pose_from_yaw_pitch(position, yaw, a.camera.pitch_down_deg.to_radians()),
                )
                .map_err(|e| CliError::Config(format!("agent {}: {e}", a.id)))?;
                let config = AgentConfig {
                    agent_id: a.id,
                    pose_glb: RigidTransform::from_yaw_translation(yaw, position),
                    camera,
                    vantage,
                    max_range: a.max_range,
                    fov_half_angle: a.fov_half_angle_deg.to_radians(),
                    detect_prob_base: a.detect_prob_base,
                    obs_noise_base: a.obs_noise_base,
                    obs_noise_per_meter: a.obs_noise_per_meter,
                };
                config
                    .validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Ok(config)
            })
            .collect()
    }

    pub fn descriptor_config(&self) -> DescriptorConfig {
        DescriptorConfig {
            dim: self.scene.descriptor_dim,
            noise_sigma: self.scene.descriptor_noise,
            class_weight: self.scene.class_weight,
        }
    }

    pub fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let scenario = ScenarioConfig {
            n_objects: self.scene.n_objects,
            extent: self.scene.extent,
            agents: self.agent_configs()?,
            descriptor: self.descriptor_config(),
            roi: Roi::Circle {
                center: Vec3::zeros(),
                radius: self.eval.roi_radius,
            },
            detection_match_radius: self.eval.detection_match_radius,
        };
        scenario
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(scenario)
    }

    pub fn caa_config(&self) -> Result<CaaConfig, CliError> {
        let config = CaaConfig {
            layers: self.caa.layers,
            dim: self.scene.descriptor_dim,
            heads: self.caa.heads,
        };
        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn loss_config(&self) -> CaaLossConfig {
        CaaLossConfig {
            temperature: self.caa.temperature,
            sinkhorn_iters: self.caa.sinkhorn_iters,
            bce_weight: self.train.bce_weight,
        }
    }

    pub fn training_noise(&self) -> TrainingNoise {
        TrainingNoise {
            max_sigma_t: self.train.max_sigma_t,
            max_sigma_r_deg: self.train.max_sigma_r_deg,
        }
    }

    /// Resolve the matcher list; CAA matchers load their parameter file.
    pub fn matchers(&self) -> Result<Vec<Matcher>, CliError> {
        use std::sync::Arc;
        if self.matchers.is_empty() {
            return Err(CliError::Config("at least one matcher required".into()));
        }
        let mut caa_params = None;
        let mut out = Vec::new();
        for m in &self.matchers {
            match m.kind.as_str() {
                "greedy" => out.push(Matcher::Greedy { radius: m.radius }),
                "hungarian" => out.push(Matcher::Hungarian {
                    reject_threshold: m.reject_threshold,
                }),
                "caa" => {
                    if caa_params.is_none() {
                        let loaded =
                            coopsense::matcher::CaaParams::load(&self.caa.params_file).map_err(
                                |e| {
                                    CliError::Config(format!(
                                        "cannot load CAA parameters from {:?}: {e}",
                                        self.caa.params_file
                                    ))
                                },
                            )?;
                        if loaded.config().dim != self.scene.descriptor_dim {
                            return Err(CliError::Config(format!(
                                "CAA parameter dim {} does not match descriptor dim {}",
                                loaded.config().dim,
                                self.scene.descriptor_dim
                            )));
                        }
                        caa_params = Some(Arc::new(loaded));
                    }
                    let config = CaaMatchConfig {
                        tau: m.tau,
                        temperature: self.caa.temperature,
                        sinkhorn_iters: self.caa.sinkhorn_iters,
                    };
                    config
                        .validate()
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    let label = m
                        .label
                        .clone()
                        .unwrap_or_else(|| format!("caa-tau{:02}", (m.tau * 100.0).round() as u32));
                    out.push(Matcher::Caa {
                        params: caa_params.clone().expect("just set"),
                        config,
                        label,
                    });
                }
                other => {
                    return Err(CliError::Config(format!(
                        "unknown matcher kind {other:?} (use greedy, hungarian, caa)"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Matchers that do not need a parameter file (baselines only).
    pub fn baseline_matchers(&self) -> Vec<Matcher> {
        self.matchers
            .iter()
            .filter_map(|m| match m.kind.as_str() {
                "greedy" => Some(Matcher::Greedy { radius: m.radius }),
                "hungarian" => Some(Matcher::Hungarian {
                    reject_threshold: m.reject_threshold,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn noise_grid(&self) -> Result<Vec<NoiseSpec>, CliError> {
        if self.noise.translation_grid.is_empty() || self.noise.rotation_grid_deg.is_empty() {
            return Err(CliError::Config("noise grids must be non-empty".into()));
        }
        let mut grid = Vec::new();
        for &t in &self.noise.translation_grid {
            for &r in &self.noise.rotation_grid_deg {
                if t < 0.0 || r < 0.0 {
                    return Err(CliError::Config("noise sigmas must be >= 0".into()));
                }
                grid.push(NoiseSpec::new(t, r));
            }
        }
        Ok(grid)
    }

    pub fn lift_model(&self) -> LiftNoiseModel {
        LiftNoiseModel {
            height_sigma: self.lift.height_sigma,
            depth_sigma_base: self.lift.depth_sigma_base,
            depth_sigma_per_meter: self.lift.depth_sigma_per_meter,
        }
    }

    pub fn cost_model(&self) -> CostModelConfig {
        CostModelConfig {
            dense: DenseCostConfig {
                range_m: self.cost.dense_range_m,
                cell_size_m: self.cost.dense_cell_m,
                channels: self.cost.dense_channels,
                bytes_per_value: self.cost.dense_bytes_per_value,
            },
            sparse: SparseCostConfig {
                n_queries: self.cost.sparse_n_queries,
                bytes_per_query: self.cost.sparse_bytes_per_query,
            },
            rate_hz: self.cost.rate_hz,
        }
    }
}

/// Apply one `--set key=value` override to a parsed TOML tree.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Config(format!("--set expects key=value, got {assignment:?}"))
    })?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(CliError::Config("--set key is empty".into()));
    }
    // Parse the value as TOML; fall back to a bare string.
    let value: toml::Value = match toml::from_str::<toml::Value>(&format!("v = {raw}")) {
        Ok(toml::Value::Table(t)) => t.get("v").cloned().expect("v present"),
        _ => toml::Value::String(raw.to_string()),
    };
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match cursor {
            toml::Value::Table(table) => {
                if last {
                    table.insert(segment.to_string(), value);
                    return Ok(());
                }
                cursor = table
                    .entry(segment.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
            toml::Value::Array(items) => {
                let index: usize = segment.parse().map_err(|_| {
                    CliError::Config(format!("--set {path}: {segment:?} is not an array index"))
                })?;
                if index >= items.len() {
                    return Err(CliError::Config(format!(
                        "--set {path}: index {index} out of bounds ({} elements)",
                        items.len()
                    )));
                }
                if last {
                    items[index] = value;
                    return Ok(());
                }
                cursor = &mut items[index];
            }
            _ => {
                return Err(CliError::Config(format!(
                    "--set {path}: {segment:?} does not address a table or array"
                )))
            }
        }
    }
    Ok(())
}

/// Load, override, and validate a config.
pub fn load_config(
    config_path: Option<&std::path::Path>,
    sets: &[String],
    seed_override: Option<u64>,
) -> Result<RunConfig, CliError> {
    let base_text = match config_path {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading config {path:?}: {e}")))?,
        None => RunConfig::default().to_toml(),
    };
    let mut tree: toml::Value = toml::from_str(&base_text)
        .map_err(|e| CliError::Config(format!("config parse: {e}")))?;
    for assignment in sets {
        apply_override(&mut tree, assignment)?;
    }
    let mut config: RunConfig = RunConfig::from_toml(
        &toml::to_string(&tree).map_err(|e| CliError::Config(format!("config rebuild: {e}")))?,
    )?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok(config)
}
