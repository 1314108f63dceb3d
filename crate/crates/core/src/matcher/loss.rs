//! Training loss for the context-aware matcher, with analytic gradients.
//!
//! The loss has two parts:
//!
//! - a negative log-likelihood of the ground-truth assignment under the
//!   scaled scores `σᵘ·σˣ·P(u,x)`, averaged over labeled pairs, and
//! - a binary cross-entropy on the matchability logits, averaged over all
//!   queries, with target 1 exactly for queries that participate in a
//!   ground-truth pair (co-visible) and 0 otherwise.
//!
//! The whole forward pass — refinement, Sinkhorn, heads — is recorded on an
//! autodiff tape, so the returned gradients are exact for every parameter
//! tensor.

use crate::autodiff::{Mat, Tape, Var};
use crate::scene::Query;

use super::caa::{insert_params, refine_on_tape, stage_set, CaaParams};
use super::sinkhorn::log_sinkhorn_on_tape;
use super::MatchError;

/// One training example: an ego set, cooperative sets, and per-agent
/// ground-truth correspondences `(coop_index, ego_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub ego: Vec<Query>,
    pub coop_sets: Vec<Vec<Query>>,
    pub gt_pairs: Vec<Vec<(usize, usize)>>,
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaaLossConfig {
    pub temperature: f64,
    pub sinkhorn_iters: usize,
    /// Weight of the matchability BCE term relative to the assignment NLL.
    pub bce_weight: f64,
}

impl Default for CaaLossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            sinkhorn_iters: 20,
            bce_weight: 1.0,
        }
    }
}

/// Reported loss components. `bce` is already scaled by `bce_weight`, so
/// `total = nll + bce`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub bce: f64,
    pub total: f64,
}

/// Gradients for every parameter tensor, in [`CaaParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct CaaGrads {
    pub tensors: Vec<Mat>,
}

fn validate_labels(example: &TrainingExample) -> Result<(), MatchError> {
    if example.gt_pairs.len() != example.coop_sets.len() {
        return Err(MatchError::LabelInconsistency(format!(
            "{} label sets for {} cooperative sets",
            example.gt_pairs.len(),
            example.coop_sets.len()
        )));
    }
    for (agent, pairs) in example.gt_pairs.iter().enumerate() {
        let n = example.coop_sets[agent].len();
        let m = example.ego.len();
        let mut coop_seen = vec![false; n];
        let mut ego_seen = vec![false; m];
        for &(u, x) in pairs {
            if u >= n || x >= m {
                return Err(MatchError::LabelInconsistency(format!(
                    "agent {agent}: pair ({u}, {x}) out of range ({n} coop, {m} ego)"
                )));
            }
            if coop_seen[u] || ego_seen[x] {
                return Err(MatchError::LabelInconsistency(format!(
                    "agent {agent}: ground-truth pairing is not injective at ({u}, {x})"
                )));
            }
            coop_seen[u] = true;
            ego_seen[x] = true;
        }
    }
    Ok(())
}

/// `log σ` of a matchability head applied to refined descriptors:
/// `−softplus(−(desc·w + b))`, shape `n×1`.
fn log_sigma(tape: &mut Tape, desc: Var, head: (Var, Var)) -> Var {
    let logits = tape.matmul(desc, head.0);
    let logits = tape.add_row_broadcast(logits, head.1);
    let neg = tape.scale(logits, -1.0);
    let sp = tape.softplus(neg);
    tape.scale(sp, -1.0)
}

/// Matchability logits `desc·w + b`, shape `n×1`.
fn head_logits(tape: &mut Tape, desc: Var, head: (Var, Var)) -> Var {
    let logits = tape.matmul(desc, head.0);
    tape.add_row_broadcast(logits, head.1)
}

/// BCE-with-logits summed over one side: `Σ softplus(m) − t·m`.
fn bce_sum(tape: &mut Tape, logits: Var, targets: Mat) -> Var {
    let sp = tape.softplus(logits);
    let tm = tape.hadamard_const(logits, targets);
    let diff = tape.sub(sp, tm);
    tape.sum_all(diff)
}

/// Compute the loss and its gradient with respect to every parameter.
pub fn caa_loss(
    params: &CaaParams,
    example: &TrainingExample,
    config: &CaaLossConfig,
) -> Result<(LossBreakdown, CaaGrads), MatchError> {
    if !(config.temperature > 0.0) {
        return Err(MatchError::InvalidParameter("temperature must be > 0"));
    }
    if config.sinkhorn_iters == 0 {
        return Err(MatchError::InvalidParameter("sinkhorn_iters must be >= 1"));
    }
    validate_labels(example)?;

    let dim = params.config().dim;
    let mut tape = Tape::new();
    let pv = insert_params(&mut tape, params);
    let mut sets = Vec::with_capacity(1 + example.coop_sets.len());
    sets.push(stage_set(&mut tape, &example.ego, dim)?);
    for coop in &example.coop_sets {
        sets.push(stage_set(&mut tape, coop, dim)?);
    }
    let refined = refine_on_tape(&mut tape, &pv, &sets);
    let ego_refined = refined[0];
    let m_ego = example.ego.len();

    // Matchability targets.
    let mut ego_targets = Mat::zeros(m_ego, 1);
    for pairs in &example.gt_pairs {
        for &(_, x) in pairs {
            ego_targets[(x, 0)] = 1.0;
        }
    }

    let total_pairs: usize = example.gt_pairs.iter().map(|p| p.len()).sum();
    let total_queries: usize =
        m_ego + example.coop_sets.iter().map(|c| c.len()).sum::<usize>();

    let mut nll_terms: Vec<Var> = Vec::new();
    let mut bce_terms: Vec<Var> = Vec::new();

    if m_ego > 0 {
        let ego_logits = head_logits(&mut tape, ego_refined, pv.ego_head);
        bce_terms.push(bce_sum(&mut tape, ego_logits, ego_targets));
    }
    let log_sigma_ego = if m_ego > 0 {
        Some(log_sigma(&mut tape, ego_refined, pv.ego_head))
    } else {
        None
    };

    for (agent, coop) in example.coop_sets.iter().enumerate() {
        let n = coop.len();
        let coop_refined = refined[1 + agent];
        if n == 0 {
            continue;
        }
        let mut coop_targets = Mat::zeros(n, 1);
        for &(u, _) in &example.gt_pairs[agent] {
            coop_targets[(u, 0)] = 1.0;
        }
        let coop_logits = head_logits(&mut tape, coop_refined, pv.coop_head);
        bce_terms.push(bce_sum(&mut tape, coop_logits, coop_targets.clone()));

        if m_ego == 0 || example.gt_pairs[agent].is_empty() {
            continue;
        }
        // log P from Sinkhorn in the log domain.
        let ego_t = tape.transpose(ego_refined);
        let affinity = tape.matmul(coop_refined, ego_t);
        let z0 = tape.scale(affinity, 1.0 / config.temperature);
        let log_p = log_sinkhorn_on_tape(&mut tape, z0, config.sinkhorn_iters);

        let mut pair_mask = Mat::zeros(n, m_ego);
        let mut ego_mask = Mat::zeros(m_ego, 1);
        for &(u, x) in &example.gt_pairs[agent] {
            pair_mask[(u, x)] = 1.0;
            ego_mask[(x, 0)] = 1.0;
        }
        let masked = tape.hadamard_const(log_p, pair_mask);
        nll_terms.push(tape.sum_all(masked));

        let log_sigma_coop = log_sigma(&mut tape, coop_refined, pv.coop_head);
        let masked_coop = tape.hadamard_const(log_sigma_coop, coop_targets);
        nll_terms.push(tape.sum_all(masked_coop));

        let lse = log_sigma_ego.expect("ego non-empty");
        let masked_ego = tape.hadamard_const(lse, ego_mask);
        nll_terms.push(tape.sum_all(masked_ego));
    }

    let zero = tape.constant(Mat::zeros(1, 1));
    let nll = if total_pairs > 0 && !nll_terms.is_empty() {
        let mut acc = nll_terms[0];
        for t in &nll_terms[1..] {
            acc = tape.add(acc, *t);
        }
        tape.scale(acc, -1.0 / total_pairs as f64)
    } else {
        zero
    };
    let bce = if total_queries > 0 && !bce_terms.is_empty() {
        let mut acc = bce_terms[0];
        for t in &bce_terms[1..] {
            acc = tape.add(acc, *t);
        }
        tape.scale(acc, config.bce_weight / total_queries as f64)
    } else {
        zero
    };
    let total = tape.add(nll, bce);

    let grads = tape.backward(total);
    let tensors: Vec<Mat> = pv
        .ordered
        .iter()
        .enumerate()
        .map(|(i, v)| {
            grads
                .wrt(*v)
                .cloned()
                .unwrap_or_else(|| Mat::zeros(
                    tape.value(pv.ordered[i]).nrows(),
                    tape.value(pv.ordered[i]).ncols(),
                ))
        })
        .collect();

    let breakdown = LossBreakdown {
        nll: tape.value(nll)[(0, 0)],
        bce: tape.value(bce)[(0, 0)],
        total: tape.value(total)[(0, 0)],
    };
    Ok((breakdown, CaaGrads { tensors }))
}
