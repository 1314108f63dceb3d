//! Query association.
//!
//! Three matchers share one result contract ([`MatchResult`]): a fixed-radius
//! greedy baseline, a Hungarian baseline with a rejection threshold, and the
//! learnable context-aware matcher ([`caa_match`]) that refines descriptors
//! with intra/inter-agent attention and extracts injective correspondences
//! through Sinkhorn normalization, matchability scaling, and a mutual
//! nearest-neighbor check.

mod caa;
mod greedy;
mod hungarian;
mod loss;
mod params_io;
mod sinkhorn;
mod train;

pub use caa::{
    caa_match, caa_refine, inter_pool_size, CaaConfig, CaaMatchConfig, CaaParams, RefinedSets,
    TAU_BALANCED, TAU_STRICT,
};
pub use greedy::greedy_distance_match;
pub use hungarian::hungarian_match;
pub use loss::{caa_loss, CaaGrads, CaaLossConfig, LossBreakdown, TrainingExample};
pub use sinkhorn::sinkhorn;
pub use train::train_caa;

use std::sync::Arc;

use thiserror::Error;

use crate::geometry::Vec3;
use crate::scene::Query;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("numerical overflow: Sinkhorn produced a non-finite or out-of-range assignment")]
    NumericalOverflow,
    #[error("inconsistent ground-truth labels: {0}")]
    LabelInconsistency(String),
    #[error("training diverged at step {step} (loss {loss})")]
    DivergenceDetected { step: usize, loss: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("bad parameter file: {0}")]
    BadParamsFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One accepted correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub coop_index: usize,
    pub ego_index: usize,
    /// Match confidence in [0, 1]; meaning depends on the matcher.
    pub score: f64,
}

/// Injective matching between one cooperative agent's queries and the ego
/// queries, with explicit unmatched sets on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_coop: Vec<usize>,
    pub unmatched_ego: Vec<usize>,
}

impl MatchResult {
    /// Build from accepted pairs, deriving the unmatched sets.
    ///
    /// Panics if the pairs are not injective or reference out-of-range
    /// indices; matchers construct injective pairs by design.
    pub fn from_pairs(pairs: Vec<MatchPair>, n_coop: usize, n_ego: usize) -> Self {
        let mut coop_used = vec![false; n_coop];
        let mut ego_used = vec![false; n_ego];
        for p in &pairs {
            assert!(p.coop_index < n_coop && p.ego_index < n_ego, "index range");
            assert!(
                !coop_used[p.coop_index] && !ego_used[p.ego_index],
                "non-injective pairing"
            );
            coop_used[p.coop_index] = true;
            ego_used[p.ego_index] = true;
        }
        let unmatched_coop = (0..n_coop).filter(|&i| !coop_used[i]).collect();
        let unmatched_ego = (0..n_ego).filter(|&i| !ego_used[i]).collect();
        Self {
            pairs,
            unmatched_coop,
            unmatched_ego,
        }
    }

    /// Check the partition invariant against the original set sizes.
    pub fn validate(&self, n_coop: usize, n_ego: usize) -> Result<(), MatchError> {
        let mut coop_seen = vec![0usize; n_coop];
        let mut ego_seen = vec![0usize; n_ego];
        for p in &self.pairs {
            if p.coop_index >= n_coop || p.ego_index >= n_ego {
                return Err(MatchError::LabelInconsistency("index out of range".into()));
            }
            coop_seen[p.coop_index] += 1;
            ego_seen[p.ego_index] += 1;
        }
        for &i in &self.unmatched_coop {
            if i >= n_coop {
                return Err(MatchError::LabelInconsistency("index out of range".into()));
            }
            coop_seen[i] += 1;
        }
        for &i in &self.unmatched_ego {
            if i >= n_ego {
                return Err(MatchError::LabelInconsistency("index out of range".into()));
            }
            ego_seen[i] += 1;
        }
        if coop_seen.iter().any(|&c| c != 1) || ego_seen.iter().any(|&c| c != 1) {
            return Err(MatchError::LabelInconsistency(
                "pairs and unmatched sets do not partition the index sets".into(),
            ));
        }
        Ok(())
    }

    pub fn predicted_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|p| (p.coop_index, p.ego_index)).collect()
    }
}

/// A configured matcher, as selected in evaluation sweeps.
#[derive(Debug, Clone)]
pub enum Matcher {
    Greedy {
        radius: f64,
    },
    Hungarian {
        reject_threshold: f64,
    },
    Caa {
        params: Arc<CaaParams>,
        config: CaaMatchConfig,
        label: String,
    },
}

impl Matcher {
    pub fn name(&self) -> String {
        match self {
            Matcher::Greedy { .. } => "greedy".to_string(),
            Matcher::Hungarian { .. } => "hungarian".to_string(),
            Matcher::Caa { label, .. } => label.clone(),
        }
    }

    /// The matcher's acceptance threshold (radius, rejection distance, or τ).
    pub fn threshold(&self) -> f64 {
        match self {
            Matcher::Greedy { radius } => *radius,
            Matcher::Hungarian { reject_threshold } => *reject_threshold,
            Matcher::Caa { config, .. } => config.tau,
        }
    }

    /// Match every cooperative set against the ego set.
    pub fn match_sets(
        &self,
        ego: &[Query],
        coop_sets: &[Vec<Query>],
    ) -> Result<Vec<MatchResult>, MatchError> {
        match self {
            Matcher::Greedy { radius } => coop_sets
                .iter()
                .map(|coop| {
                    let coop_pos: Vec<Vec3> = coop.iter().map(|q| q.position).collect();
                    let coop_conf: Vec<f64> = coop.iter().map(|q| q.confidence).collect();
                    let ego_pos: Vec<Vec3> = ego.iter().map(|q| q.position).collect();
                    greedy_distance_match(&coop_pos, &coop_conf, &ego_pos, *radius)
                })
                .collect(),
            Matcher::Hungarian { reject_threshold } => coop_sets
                .iter()
                .map(|coop| {
                    let coop_pos: Vec<Vec3> = coop.iter().map(|q| q.position).collect();
                    let ego_pos: Vec<Vec3> = ego.iter().map(|q| q.position).collect();
                    hungarian_match(&coop_pos, &ego_pos, *reject_threshold)
                })
                .collect(),
            Matcher::Caa { params, config, .. } => caa_match(params, ego, coop_sets, config),
        }
    }
}
