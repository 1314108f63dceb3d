//! Lift-strategy comparison: height-derived depth vs direct depth under
//! realistic prediction-noise models.
//!
//! Global object heights cluster tightly, so a height head's error is modeled
//! as a constant σ; direct depth regression degrades with distance, so its
//! error grows linearly with range. Both strategies lift the same noiseless
//! pixel, and the resulting 3D position errors are binned by horizontal range
//! from the observing agent.

use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{lift_proposal, project_point, LiftStrategy, PixelProposal};
use crate::scene::{generate_scene, is_visible, Vantage};
use crate::seeds;

use super::sweep::ScenarioConfig;
use super::{EvalError, RangeBuckets};

/// Noise magnitudes for the simulated prediction heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftNoiseModel {
    /// Constant std of the predicted global height, meters.
    pub height_sigma: f64,
    /// Depth prediction std at zero range, meters.
    pub depth_sigma_base: f64,
    /// Additional depth std per meter of camera depth.
    pub depth_sigma_per_meter: f64,
}

impl Default for LiftNoiseModel {
    fn default() -> Self {
        Self {
            height_sigma: 0.3,
            depth_sigma_base: 0.0,
            depth_sigma_per_meter: 0.05,
        }
    }
}

/// Mean lifted-position error per range bucket for both strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftCompareRow {
    pub bucket_lo: f64,
    pub bucket_hi: f64,
    pub n_samples: usize,
    /// Samples dropped because the height-derived route was degenerate (or a
    /// noisy depth came out non-positive); dropped from both strategies to
    /// keep the comparison paired.
    pub n_skipped: usize,
    pub mean_err_height_derived: f64,
    pub mean_err_direct_depth: f64,
}

pub const LIFT_CSV_HEADER: &str =
    "bucket_lo_m,bucket_hi_m,n_samples,n_skipped,mean_err_height_derived_m,mean_err_direct_depth_m";

impl LiftCompareRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.9},{:.9}",
            self.bucket_lo,
            self.bucket_hi,
            self.n_samples,
            self.n_skipped,
            self.mean_err_height_derived,
            self.mean_err_direct_depth
        )
    }
}

/// Compare the two lifting strategies on the scenario's first high-vantage
/// agent over freshly generated scenes, one per seed.
pub fn strategy_comparison(
    scenario: &ScenarioConfig,
    model: &LiftNoiseModel,
    buckets: &RangeBuckets,
    seeds_list: &[u64],
) -> Result<Vec<LiftCompareRow>, EvalError> {
    scenario.validate()?;
    let agent = scenario
        .agents
        .iter()
        .find(|a| a.vantage == Vantage::HighVantage)
        .ok_or(EvalError::NoHighVantageAgent)?;
    let agent_from_glb = agent.pose_glb.inverse();

    let mut n = vec![0usize; buckets.len()];
    let mut skipped = vec![0usize; buckets.len()];
    let mut sum_height = vec![0.0f64; buckets.len()];
    let mut sum_direct = vec![0.0f64; buckets.len()];

    for &seed in seeds_list {
        let scene = generate_scene(
            scenario.n_objects,
            scenario.extent,
            scenario.agents.clone(),
            seed,
        )?;
        for object in &scene.objects {
            if !is_visible(agent, object) {
                continue;
            }
            let Ok((u, v, depth)) = project_point(&agent.camera, object.center_glb) else {
                continue;
            };
            let dx = object.center_glb.x - agent.pose_glb.translation().x;
            let dy = object.center_glb.y - agent.pose_glb.translation().y;
            let Some(bucket) = buckets.bucket_of((dx * dx + dy * dy).sqrt()) else {
                continue;
            };

            let mut rng = seeds::rng(seeds::mix2(seed, seeds::STREAM_LIFT, object.id));
            let zh: f64 = StandardNormal.sample(&mut rng);
            let zd: f64 = StandardNormal.sample(&mut rng);
            let noisy_height = object.center_glb.z + model.height_sigma * zh;
            let depth_sigma = model.depth_sigma_base + model.depth_sigma_per_meter * depth;
            let noisy_depth = depth + depth_sigma * zd;

            let truth = agent_from_glb.apply(object.center_glb);
            if noisy_depth <= 0.0 {
                skipped[bucket] += 1;
                continue;
            }
            let height_prop = PixelProposal::new(u, v, 1.0, Some(noisy_height), None)
                .expect("valid proposal");
            let lifted_height = match lift_proposal(
                &agent.camera,
                &height_prop,
                LiftStrategy::HeightDerived,
                &agent_from_glb,
            ) {
                Ok(p) => p,
                Err(_) => {
                    skipped[bucket] += 1;
                    continue;
                }
            };
            let depth_prop = PixelProposal::new(u, v, 1.0, None, Some(noisy_depth))
                .expect("valid proposal");
            let lifted_direct = lift_proposal(
                &agent.camera,
                &depth_prop,
                LiftStrategy::DirectDepth,
                &agent_from_glb,
            )
            .expect("direct lift with positive depth cannot fail");

            n[bucket] += 1;
            sum_height[bucket] += (lifted_height - truth).norm();
            sum_direct[bucket] += (lifted_direct - truth).norm();
        }
    }

    Ok((0..buckets.len())
        .map(|b| {
            let (lo, hi) = buckets.bounds(b);
            LiftCompareRow {
                bucket_lo: lo,
                bucket_hi: hi,
                n_samples: n[b],
                n_skipped: skipped[b],
                mean_err_height_derived: if n[b] == 0 {
                    0.0
                } else {
                    sum_height[b] / n[b] as f64
                },
                mean_err_direct_depth: if n[b] == 0 {
                    0.0
                } else {
                    sum_direct[b] / n[b] as f64
                },
            }
        })
        .collect())
}
