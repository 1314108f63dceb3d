//! Merging matched and unmatched queries into one detection set.
//!
//! Every ego query becomes one detection, absorbing all cooperative queries
//! matched to it (confidence-weighted mean position/size, noisy-OR
//! confidence). Unmatched cooperative queries carry over verbatim so
//! ego-missed and ego-invisible targets survive; optionally, unmatched
//! queries from *different* agents that land within a small radius of each
//! other are merged the same way, since two drones reporting the same unseen
//! car should not produce two detections.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::geometry::Vec3;
use crate::matcher::MatchResult;
use crate::scene::Query;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("match results do not line up with query sets: {0}")]
    IndexMismatch(String),
}

/// One fused detection in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub position: Vec3,
    pub size: Vec3,
    pub confidence: f64,
    /// Contributing queries as `(agent_id, query_index)`.
    pub sources: BTreeSet<(u32, usize)>,
    /// Evaluation-only label; never used by fusion logic.
    pub gt_object_id: Option<u64>,
}

impl Detection {
    /// Structured single-line form: position, size, confidence, sources,
    /// optional label.
    pub fn to_line(&self) -> String {
        let sources: Vec<String> = self
            .sources
            .iter()
            .map(|(a, i)| format!("{a}:{i}"))
            .collect();
        let gt = self
            .gt_object_id
            .map(|id| id.to_string())
            .unwrap_or_else(|| "-".to_string());
        format!(
            "{} {} {} {} {} {} {} {} {}",
            crate::textio::fmt_f64(self.position.x),
            crate::textio::fmt_f64(self.position.y),
            crate::textio::fmt_f64(self.position.z),
            crate::textio::fmt_f64(self.size.x),
            crate::textio::fmt_f64(self.size.y),
            crate::textio::fmt_f64(self.size.z),
            crate::textio::fmt_f64(self.confidence),
            sources.join(","),
            gt
        )
    }
}

/// Fusion options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuseConfig {
    /// Merge unmatched cooperative queries from different agents closer than
    /// this distance; `None` disables cross-agent dedup.
    pub dedup_radius: Option<f64>,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            dedup_radius: Some(1.0),
        }
    }
}

struct Contribution<'a> {
    query: &'a Query,
    index: usize,
}

fn weighted_merge(contributions: &[Contribution<'_>]) -> Detection {
    let mut weight = 0.0;
    let mut position = Vec3::zeros();
    let mut size = Vec3::zeros();
    let mut miss_product = 1.0;
    let mut sources = BTreeSet::new();
    let mut gt_object_id = None;
    for c in contributions {
        let w = c.query.confidence;
        weight += w;
        position += c.query.position * w;
        size += c.query.size * w;
        miss_product *= 1.0 - c.query.confidence;
        sources.insert((c.query.owner_agent, c.index));
        if gt_object_id.is_none() {
            gt_object_id = c.query.gt_object_id;
        }
    }
    if weight > 0.0 {
        position /= weight;
        size /= weight;
    } else if let Some(first) = contributions.first() {
        // All-zero confidences: fall back to the first contributor.
        position = first.query.position;
        size = first.query.size;
    }
    Detection {
        position,
        size,
        confidence: 1.0 - miss_product,
        sources,
        gt_object_id,
    }
}

/// Fuse ego queries, matched cooperative queries, and unmatched cooperative
/// queries into the final detection set.
///
/// `match_results[i]` must refer to `coop_sets[i]` against `ego`. With dedup
/// disabled the output length is exactly
/// `|ego| + Σ |unmatched cooperative queries|`; with dedup enabled, groups of
/// nearby unmatched queries from different agents collapse to one detection
/// each.
pub fn fuse(
    ego: &[Query],
    coop_sets: &[Vec<Query>],
    match_results: &[MatchResult],
    config: &FuseConfig,
) -> Result<Vec<Detection>, FusionError> {
    if coop_sets.len() != match_results.len() {
        return Err(FusionError::IndexMismatch(format!(
            "{} match results for {} cooperative sets",
            match_results.len(),
            coop_sets.len()
        )));
    }
    for (agent, (coop, result)) in coop_sets.iter().zip(match_results).enumerate() {
        result.validate(coop.len(), ego.len()).map_err(|e| {
            FusionError::IndexMismatch(format!("agent slot {agent}: {e}"))
        })?;
    }

    // Ego-anchored detections.
    let mut ego_contributions: Vec<Vec<Contribution<'_>>> = ego
        .iter()
        .enumerate()
        .map(|(i, q)| vec![Contribution { query: q, index: i }])
        .collect();
    for (coop, result) in coop_sets.iter().zip(match_results) {
        for pair in &result.pairs {
            ego_contributions[pair.ego_index].push(Contribution {
                query: &coop[pair.coop_index],
                index: pair.coop_index,
            });
        }
    }
    let mut detections: Vec<Detection> =
        ego_contributions.iter().map(|c| weighted_merge(c)).collect();

    // Unmatched cooperative queries.
    let mut leftovers: Vec<Contribution<'_>> = Vec::new();
    for (coop, result) in coop_sets.iter().zip(match_results) {
        for &u in &result.unmatched_coop {
            leftovers.push(Contribution {
                query: &coop[u],
                index: u,
            });
        }
    }
    match config.dedup_radius {
        None => {
            for c in &leftovers {
                detections.push(weighted_merge(std::slice::from_ref(c)));
            }
        }
        Some(radius) => {
            for group in dedup_groups(&leftovers, radius) {
                let members: Vec<Contribution<'_>> = group
                    .iter()
                    .map(|&k| Contribution {
                        query: leftovers[k].query,
                        index: leftovers[k].index,
                    })
                    .collect();
                detections.push(weighted_merge(&members));
            }
        }
    }
    Ok(detections)
}

/// Connected components among leftover queries, with edges between queries of
/// *different* agents closer than `radius`. Groups come out ordered by their
/// smallest member index, so output order is deterministic.
fn dedup_groups(leftovers: &[Contribution<'_>], radius: f64) -> Vec<Vec<usize>> {
    let n = leftovers.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if leftovers[i].query.owner_agent == leftovers[j].query.owner_agent {
                continue;
            }
            let d = (leftovers[i].query.position - leftovers[j].query.position).norm();
            if d <= radius {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}
