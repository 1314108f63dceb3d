//! Localization-noise robustness sweeps.
//!
//! One sweep evaluates every matcher on identical data: for each (noise
//! level, seed) cell a scene is generated, observed, perturbed, and projected
//! once, and all matchers consume that same snapshot. Because pose noise is
//! drawn as a standard normal scaled by σ, the same seed produces the same
//! underlying draw across noise levels — degradation curves are paired, not
//! re-randomized.

use rayon::prelude::*;

use crate::fusion::{fuse, FuseConfig};
use crate::matcher::Matcher;
use crate::scene::{
    generate_scene, gt_union, is_visible, observe_all, perturb_pose, project_queries_to_ego,
    AgentConfig, DescriptorConfig, NoiseSpec, Query, Roi, Scene, SceneObject,
};
use crate::seeds;

use super::data::gt_correspondences;
use super::{association_metrics_multi, detection_metrics, EvalError, RangeBuckets};

/// Scene-generation and evaluation setup shared by sweeps and training-data
/// builders. The first agent is the ego agent.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub n_objects: usize,
    pub extent: f64,
    pub agents: Vec<AgentConfig>,
    pub descriptor: DescriptorConfig,
    /// Region of interest in the ego frame.
    pub roi: Roi,
    /// Center-distance radius for detection/ground-truth matching, meters.
    pub detection_match_radius: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.agents.is_empty() {
            return Err(EvalError::InvalidParameter(
                "scenario needs at least the ego agent",
            ));
        }
        if !(self.extent > 0.0) {
            return Err(EvalError::InvalidParameter("extent must be > 0"));
        }
        if !(self.detection_match_radius > 0.0) {
            return Err(EvalError::InvalidParameter(
                "detection_match_radius must be > 0",
            ));
        }
        if self.descriptor.dim == 0 {
            return Err(EvalError::InvalidParameter("descriptor dim must be >= 1"));
        }
        for agent in &self.agents {
            agent.validate()?;
        }
        Ok(())
    }

    pub fn ego(&self) -> &AgentConfig {
        &self.agents[0]
    }
}

/// One fully prepared evaluation instance.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub scene: Scene,
    pub ego_queries: Vec<Query>,
    /// Cooperative queries projected into the ego frame through believed
    /// (noise-perturbed) poses, one set per cooperative agent.
    pub coop_projected: Vec<Vec<Query>>,
    /// Ground-truth correspondences per cooperative agent.
    pub gt_pairs: Vec<Vec<(usize, usize)>>,
    /// Ground-truth union in the ego frame, ROI-filtered.
    pub gt_ego_frame: Vec<SceneObject>,
}

/// Generate, observe, perturb, and project one scene.
pub fn make_snapshot(
    scenario: &ScenarioConfig,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Snapshot, EvalError> {
    scenario.validate()?;
    let mut scene = generate_scene(
        scenario.n_objects,
        scenario.extent,
        scenario.agents.clone(),
        seed,
    )?;
    scene.descriptor = scenario.descriptor;
    let all_queries = observe_all(&scene, seed);
    snapshot_from_scene(&scene, &all_queries, noise, seed, &scenario.roi)
}

/// Build a snapshot from an existing scene and its per-agent queries (for
/// example, loaded from a scene file). The scene's first agent is the ego.
pub fn snapshot_from_scene(
    scene: &Scene,
    all_queries: &[(u32, Vec<Query>)],
    noise: &NoiseSpec,
    seed: u64,
    roi: &Roi,
) -> Result<Snapshot, EvalError> {
    if scene.agents.is_empty() || all_queries.is_empty() {
        return Err(EvalError::InvalidParameter(
            "scene needs at least the ego agent and its query list",
        ));
    }
    let ego = &scene.agents[0];
    let ego_queries = all_queries[0].1.clone();

    let mut coop_projected = Vec::new();
    let mut gt_pairs = Vec::new();
    for (agent, (agent_id, queries)) in scene.agents.iter().zip(all_queries).skip(1) {
        debug_assert_eq!(agent.agent_id, *agent_id);
        let believed = perturb_pose(
            &agent.pose_glb,
            noise,
            seeds::mix2(seed, seeds::STREAM_POSE_NOISE, agent.agent_id as u64),
        );
        let projected = project_queries_to_ego(queries, &believed, &ego.pose_glb);
        gt_pairs.push(gt_correspondences(&projected, &ego_queries));
        coop_projected.push(projected);
    }

    // Ground-truth union: objects annotatable (visible) by any agent, in the
    // ego frame, ROI-filtered. True poses are used here — localization noise
    // corrupts transmitted queries, not the evaluation reference.
    let glb_to_ego = ego.pose_glb.inverse();
    let ego_gt: Vec<SceneObject> = scene
        .objects
        .iter()
        .filter(|o| is_visible(ego, o))
        .map(|o| {
            let mut c = o.clone();
            c.center_glb = glb_to_ego.apply(c.center_glb);
            c
        })
        .collect();
    let mut acc = ego_gt;
    for agent in scene.agents.iter().skip(1) {
        let coop_gt: Vec<SceneObject> = scene
            .objects
            .iter()
            .filter(|o| is_visible(agent, o))
            .map(|o| {
                let mut c = o.clone();
                c.center_glb = agent.pose_glb.inverse().apply(c.center_glb);
                c
            })
            .collect();
        let coop_to_ego = glb_to_ego.compose(&agent.pose_glb);
        acc = gt_union(&acc, &coop_gt, &coop_to_ego, roi);
    }

    Ok(Snapshot {
        scene: scene.clone(),
        ego_queries,
        coop_projected,
        gt_pairs,
        gt_ego_frame: acc,
    })
}

/// One aggregated sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub matcher: String,
    pub sigma_t: f64,
    pub sigma_r_deg: f64,
    /// The matcher's acceptance threshold (τ for the learned matcher, the
    /// radius/rejection distance for the baselines).
    pub threshold: f64,
    /// Association F1, averaged over seeds.
    pub f1: f64,
    /// Detection duplicate rate, averaged over seeds.
    pub duplicate_rate: f64,
    /// Detection recall over the ROI ground-truth union, averaged over seeds.
    pub recall: f64,
}

pub const SWEEP_CSV_HEADER: &str = "matcher,sigma_t,sigma_r_deg,tau,f1,duplicate_rate,recall";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.9},{:.9},{:.9}",
            self.matcher,
            self.sigma_t,
            self.sigma_r_deg,
            self.threshold,
            self.f1,
            self.duplicate_rate,
            self.recall
        )
    }
}

/// Default noise grid: translation σ ∈ {0, 0.2, …, 1.2} m crossed with yaw
/// σ ∈ {0, 1, …, 5}°.
pub fn default_noise_grid() -> Vec<NoiseSpec> {
    let mut grid = Vec::new();
    for ti in 0..=6 {
        for ri in 0..=5 {
            grid.push(NoiseSpec::new(0.2 * ti as f64, ri as f64));
        }
    }
    grid
}

struct CellOutcome {
    f1: f64,
    duplicate_rate: f64,
    recall: f64,
}

fn evaluate_cell(
    scenario: &ScenarioConfig,
    matcher: &Matcher,
    snapshot: &Snapshot,
) -> Result<CellOutcome, EvalError> {
    let results = matcher.match_sets(&snapshot.ego_queries, &snapshot.coop_projected)?;
    let predicted: Vec<Vec<(usize, usize)>> =
        results.iter().map(|r| r.predicted_pairs()).collect();
    let assoc = association_metrics_multi(&predicted, &snapshot.gt_pairs);

    let detections = fuse(
        &snapshot.ego_queries,
        &snapshot.coop_projected,
        &results,
        &FuseConfig::default(),
    )?;
    let wide = RangeBuckets::new(vec![0.0, 1e6]).expect("static edges");
    let det = detection_metrics(
        &detections,
        &snapshot.gt_ego_frame,
        &wide,
        scenario.detection_match_radius,
    )?;
    Ok(CellOutcome {
        f1: assoc.f1,
        duplicate_rate: det[0].duplicate_rate,
        recall: det[0].recall,
    })
}

/// Run the full sweep: every matcher × every noise level × every seed, with
/// identical scenes and noise draws shared across matchers.
///
/// Rows come back sorted by (matcher order, noise order). `threads` bounds
/// the rayon pool; results are independent of the thread count.
pub fn noise_sweep(
    scenario: &ScenarioConfig,
    matchers: &[Matcher],
    noise_grid: &[NoiseSpec],
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    scenario.validate()?;
    if matchers.is_empty() || noise_grid.is_empty() || seeds.is_empty() {
        return Err(EvalError::InvalidParameter(
            "matchers, noise grid, and seeds must be non-empty",
        ));
    }
    let tasks: Vec<(usize, usize)> = (0..noise_grid.len())
        .flat_map(|ni| (0..seeds.len()).map(move |si| (ni, si)))
        .collect();

    type CellRows = Vec<((usize, usize), Vec<CellOutcome>)>;
    let run = || -> Result<Vec<Vec<Vec<CellOutcome>>>, EvalError> {
        // outcomes[noise][seed][matcher]
        let cells: Result<CellRows, EvalError> = tasks
            .par_iter()
            .map(|&(ni, si)| {
                let snapshot = make_snapshot(scenario, &noise_grid[ni], seeds[si])?;
                let outcomes: Result<Vec<CellOutcome>, EvalError> = matchers
                    .iter()
                    .map(|m| evaluate_cell(scenario, m, &snapshot))
                    .collect();
                Ok(((ni, si), outcomes?))
            })
            .collect();
        let mut table: Vec<Vec<Vec<CellOutcome>>> = (0..noise_grid.len())
            .map(|_| (0..seeds.len()).map(|_| Vec::new()).collect())
            .collect();
        for ((ni, si), outcomes) in cells? {
            table[ni][si] = outcomes;
        }
        Ok(table)
    };
    let table = if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|_| EvalError::InvalidParameter("could not build thread pool"))?;
        pool.install(run)?
    } else {
        run()?
    };

    let mut rows = Vec::with_capacity(matchers.len() * noise_grid.len());
    for (mi, matcher) in matchers.iter().enumerate() {
        for (ni, noise) in noise_grid.iter().enumerate() {
            let n = seeds.len() as f64;
            let mut f1 = 0.0;
            let mut dup = 0.0;
            let mut rec = 0.0;
            for per_seed in &table[ni] {
                let cell = &per_seed[mi];
                f1 += cell.f1;
                dup += cell.duplicate_rate;
                rec += cell.recall;
            }
            rows.push(SweepRow {
                matcher: matcher.name(),
                sigma_t: noise.sigma_translation,
                sigma_r_deg: noise.sigma_rotation_deg,
                threshold: matcher.threshold(),
                f1: f1 / n,
                duplicate_rate: dup / n,
                recall: rec / n,
            });
        }
    }
    Ok(rows)
}
