//! Hungarian (optimal linear assignment) baseline with rejection threshold.

use nalgebra::DMatrix;

use crate::geometry::Vec3;

use super::{MatchError, MatchPair, MatchResult};

/// Globally optimal minimum-cost assignment on Euclidean distances, followed
/// by rejection of any pair farther apart than `reject_threshold`.
///
/// Rectangular inputs are allowed; `min(|coop|, |ego|)` assignments are made
/// before rejection. Pair scores are `1 − distance/reject_threshold`.
pub fn hungarian_match(
    coop_positions: &[Vec3],
    ego_positions: &[Vec3],
    reject_threshold: f64,
) -> Result<MatchResult, MatchError> {
    if !(reject_threshold > 0.0) {
        return Err(MatchError::InvalidParameter("reject_threshold must be > 0"));
    }
    let n = coop_positions.len();
    let m = ego_positions.len();
    if n == 0 || m == 0 {
        return Ok(MatchResult::from_pairs(vec![], n, m));
    }
    let cost = DMatrix::from_fn(n, m, |i, j| (coop_positions[i] - ego_positions[j]).norm());
    let assignment = solve_lap(&cost);
    let mut pairs = Vec::new();
    for (i, j) in assignment {
        let d = cost[(i, j)];
        if d <= reject_threshold {
            pairs.push(MatchPair {
                coop_index: i,
                ego_index: j,
                score: (1.0 - d / reject_threshold).clamp(0.0, 1.0),
            });
        }
    }
    pairs.sort_by_key(|p| p.coop_index);
    Ok(MatchResult::from_pairs(pairs, n, m))
}

/// Exact rectangular linear assignment by shortest augmenting paths with
/// potentials (Jonker-Volgenant style), O(n²·m).
///
/// Returns the optimal `(row, col)` assignment covering all rows of the
/// smaller dimension.
#[allow(clippy::needless_range_loop)] // index loops mirror the classical statement
pub fn solve_lap(cost: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let transposed = cost.nrows() > cost.ncols();
    let work;
    let c = if transposed {
        work = cost.transpose();
        &work
    } else {
        cost
    };
    let n = c.nrows();
    let m = c.ncols();

    // 1-indexed potentials; p[j] is the row matched to column j (0 = none).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for j in 1..=m {
        if p[j] != 0 {
            let (row, col) = (p[j] - 1, j - 1);
            if transposed {
                out.push((col, row));
            } else {
                out.push((row, col));
            }
        }
    }
    out.sort_unstable();
    out
}
