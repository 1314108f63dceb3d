//! Fixed-radius greedy nearest-neighbor baseline.

use crate::geometry::Vec3;

use super::{MatchError, MatchPair, MatchResult};

/// Greedily match cooperative queries to ego queries within `radius`.
///
/// Cooperative queries are visited in descending confidence order (ties by
/// ascending index); each is paired with the nearest still-unmatched ego
/// query within `radius` (ties by ascending ego index). Pair scores are
/// `1 − distance/radius`.
pub fn greedy_distance_match(
    coop_positions: &[Vec3],
    coop_confidences: &[f64],
    ego_positions: &[Vec3],
    radius: f64,
) -> Result<MatchResult, MatchError> {
    if !(radius > 0.0) {
        return Err(MatchError::InvalidParameter("radius must be > 0"));
    }
    if coop_confidences.len() != coop_positions.len() {
        return Err(MatchError::DimensionMismatch {
            what: "coop confidences",
            expected: coop_positions.len(),
            actual: coop_confidences.len(),
        });
    }
    let mut order: Vec<usize> = (0..coop_positions.len()).collect();
    order.sort_by(|&a, &b| {
        coop_confidences[b]
            .partial_cmp(&coop_confidences[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut ego_taken = vec![false; ego_positions.len()];
    let mut pairs = Vec::new();
    for &u in &order {
        let mut best: Option<(usize, f64)> = None;
        for (x, ego_pos) in ego_positions.iter().enumerate() {
            if ego_taken[x] {
                continue;
            }
            let d = (coop_positions[u] - ego_pos).norm();
            if d > radius {
                continue;
            }
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((x, d));
            }
        }
        if let Some((x, d)) = best {
            ego_taken[x] = true;
            pairs.push(MatchPair {
                coop_index: u,
                ego_index: x,
                score: (1.0 - d / radius).clamp(0.0, 1.0),
            });
        }
    }
    pairs.sort_by_key(|p| p.coop_index);
    Ok(MatchResult::from_pairs(
        pairs,
        coop_positions.len(),
        ego_positions.len(),
    ))
}
