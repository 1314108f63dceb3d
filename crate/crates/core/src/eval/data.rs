//! Ground-truth correspondence extraction and training-corpus assembly.

use rand::Rng;

use crate::matcher::TrainingExample;
use crate::scene::{
    generate_scene, observe_all, perturb_pose, project_queries_to_ego, NoiseSpec, Query,
};
use crate::seeds;

use super::sweep::ScenarioConfig;
use super::EvalError;

/// Ground-truth correspondences between a cooperative set and the ego set:
/// pairs of indices whose queries carry the same object label.
///
/// Each side observes an object at most once, so the pairing is injective;
/// if duplicates ever appear, the first occurrence wins.
pub fn gt_correspondences(coop: &[Query], ego: &[Query]) -> Vec<(usize, usize)> {
    let mut ego_by_id = std::collections::BTreeMap::new();
    for (x, q) in ego.iter().enumerate() {
        if let Some(id) = q.gt_object_id {
            ego_by_id.entry(id).or_insert(x);
        }
    }
    let mut used_ego = std::collections::BTreeSet::new();
    let mut pairs = Vec::new();
    let mut seen_coop_ids = std::collections::BTreeSet::new();
    for (u, q) in coop.iter().enumerate() {
        let Some(id) = q.gt_object_id else { continue };
        if !seen_coop_ids.insert(id) {
            continue;
        }
        if let Some(&x) = ego_by_id.get(&id) {
            if used_ego.insert(x) {
                pairs.push((u, x));
            }
        }
    }
    pairs
}

/// Localization-noise range used when assembling training data; each scene
/// draws its σ values uniformly from `[0, max]` so the matcher sees clean and
/// heavily misaligned examples alike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingNoise {
    pub max_sigma_t: f64,
    pub max_sigma_r_deg: f64,
}

impl Default for TrainingNoise {
    fn default() -> Self {
        Self {
            max_sigma_t: 1.2,
            max_sigma_r_deg: 4.0,
        }
    }
}

/// Build one labeled training example from one generated scene.
pub fn build_training_example(
    scenario: &ScenarioConfig,
    noise: &TrainingNoise,
    seed: u64,
) -> Result<TrainingExample, EvalError> {
    scenario.validate()?;
    let mut scene = generate_scene(
        scenario.n_objects,
        scenario.extent,
        scenario.agents.clone(),
        seed,
    )?;
    scene.descriptor = scenario.descriptor;
    let all_queries = observe_all(&scene, seed);
    training_example_from_scene(&scene, &all_queries, noise, seed)
}

/// Build a labeled training example from an existing scene and its queries
/// (for example, loaded from a scene file). The first agent is the ego; each
/// cooperative agent's believed pose is perturbed with a noise level drawn
/// uniformly from the configured range.
pub fn training_example_from_scene(
    scene: &crate::scene::Scene,
    all_queries: &[(u32, Vec<Query>)],
    noise: &TrainingNoise,
    seed: u64,
) -> Result<TrainingExample, EvalError> {
    if scene.agents.is_empty() || all_queries.is_empty() {
        return Err(EvalError::InvalidParameter(
            "scene needs at least the ego agent and its query list",
        ));
    }
    let ego = &scene.agents[0];
    let ego_queries = all_queries[0].1.clone();

    let mut level_rng = seeds::rng(seeds::mix2(seed, seeds::STREAM_TRAIN, 1));
    let sigma_t = level_rng.random_range(0.0..=noise.max_sigma_t);
    let sigma_r = level_rng.random_range(0.0..=noise.max_sigma_r_deg);
    let level = NoiseSpec::new(sigma_t, sigma_r);

    let mut coop_sets = Vec::new();
    let mut gt_pairs = Vec::new();
    for (agent, (_, queries)) in scene.agents.iter().zip(all_queries).skip(1) {
        let believed = perturb_pose(
            &agent.pose_glb,
            &level,
            seeds::mix2(seed, seeds::STREAM_POSE_NOISE, agent.agent_id as u64),
        );
        let projected = project_queries_to_ego(queries, &believed, &ego.pose_glb);
        gt_pairs.push(gt_correspondences(&projected, &ego_queries));
        coop_sets.push(projected);
    }
    Ok(TrainingExample {
        ego: ego_queries,
        coop_sets,
        gt_pairs,
    })
}

/// Build a corpus of `n_scenes` training examples with seeds derived from
/// `base_seed`.
pub fn build_training_corpus(
    scenario: &ScenarioConfig,
    noise: &TrainingNoise,
    n_scenes: usize,
    base_seed: u64,
) -> Result<Vec<TrainingExample>, EvalError> {
    (0..n_scenes)
        .map(|k| {
            build_training_example(
                scenario,
                noise,
                seeds::mix2(base_seed, seeds::STREAM_TRAIN, k as u64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn q(id: Option<u64>) -> Query {
        Query {
            owner_agent: 0,
            position: Vec3::zeros(),
            size: Vec3::new(1.0, 1.0, 1.0),
            descriptor: vec![],
            confidence: 1.0,
            gt_object_id: id,
        }
    }

    #[test]
    fn correspondences_pair_by_label() {
        let coop = vec![q(Some(5)), q(Some(9)), q(None), q(Some(2))];
        let ego = vec![q(Some(9)), q(Some(2)), q(Some(7))];
        assert_eq!(gt_correspondences(&coop, &ego), vec![(1, 0), (3, 1)]);
    }

    #[test]
    fn corpus_is_deterministic_and_labeled() {
        let scenario = super::super::sweep::tests::two_agent_scenario();
        let noise = TrainingNoise::default();
        let a = build_training_corpus(&scenario, &noise, 4, 77).unwrap();
        let b = build_training_corpus(&scenario, &noise, 4, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let mut total_pairs = 0;
        for ex in &a {
            assert_eq!(ex.coop_sets.len(), 1);
            assert_eq!(ex.gt_pairs.len(), 1);
            total_pairs += ex.gt_pairs[0].len();
            for &(u, x) in &ex.gt_pairs[0] {
                assert_eq!(
                    ex.coop_sets[0][u].gt_object_id,
                    ex.ego[x].gt_object_id
                );
            }
        }
        assert!(total_pairs > 0);
    }
}
