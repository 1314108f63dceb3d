//! Context-aware association: attention-refined descriptors matched through
//! Sinkhorn normalization with matchability scaling.
//!
//! Descriptors are refined over `L` layers. Each layer runs two sub-blocks,
//! each a residual attention step followed by a residual feed-forward:
//!
//! 1. *Intra-agent* self-attention within each agent's query set, with a
//!    relative-position bias: pair offsets `(Δx, Δy, Δz, ‖Δ‖)` are encoded by
//!    a small MLP and dotted with the attention queries. Relative offsets
//!    make the block exactly invariant to rigid translations of one agent's
//!    positions — the property that survives alignment error.
//! 2. *Inter-agent* self-attention over the concatenation of all agents'
//!    queries (ego included), with no positional term at all, so queries for
//!    the same physical object can align their semantics regardless of where
//!    projection noise put them.
//!
//! Matching then runs per cooperative agent: an affinity matrix of refined
//! inner products is Sinkhorn-normalized, scaled by per-descriptor
//! matchability scores from two linear heads (one per agent role), and
//! filtered by a mutual nearest-neighbor check and a confidence threshold τ.

use rand::Rng;

use crate::autodiff::{Mat, Tape, Var};
use crate::scene::Query;

use super::sinkhorn::sinkhorn;
use super::{MatchError, MatchPair, MatchResult};

/// Balanced confidence threshold preset.
pub const TAU_BALANCED: f64 = 0.4;

/// Length scale (meters) that normalizes relative-position features before
/// the encoder MLP, keeping its inputs O(1) at driving-scene scales.
pub const REL_POS_SCALE_M: f64 = 20.0;
/// Strict confidence threshold preset (peak precision in clean conditions).
pub const TAU_STRICT: f64 = 0.8;

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaaConfig {
    /// Number of refinement layers.
    pub layers: usize,
    /// Descriptor dimension.
    pub dim: usize,
    /// Attention heads (must divide `dim`).
    pub heads: usize,
}

impl Default for CaaConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            dim: 32,
            heads: 1,
        }
    }
}

impl CaaConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.dim == 0 {
            return Err(MatchError::InvalidParameter("dim must be >= 1"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(MatchError::InvalidParameter("heads must divide dim"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AttentionWeights {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FeedForward {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

/// Encoder for pairwise relative-position features `(Δx, Δy, Δz, ‖Δ‖)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RelPosEncoder {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CaaLayer {
    pub intra: AttentionWeights,
    pub intra_ffn: FeedForward,
    pub inter: AttentionWeights,
    pub inter_ffn: FeedForward,
    pub relpos: RelPosEncoder,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MatchabilityHead {
    pub w: Mat,
    pub b: Mat,
}

/// Trainable weights of the context-aware association network.
#[derive(Debug, Clone, PartialEq)]
pub struct CaaParams {
    config: CaaConfig,
    pub(crate) layers: Vec<CaaLayer>,
    pub(crate) coop_head: MatchabilityHead,
    pub(crate) ego_head: MatchabilityHead,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl CaaParams {
    /// Initialize weights uniformly in ±√(6/(fan_in+fan_out)) with zero
    /// biases; matchability head biases start at +1 so an untrained network
    /// does not reject everything.
    pub fn init(config: CaaConfig, seed: u64) -> Result<Self, MatchError> {
        config.validate()?;
        let d = config.dim;
        let h = 4 * d;
        let mut rng = crate::seeds::rng(seed);
        let attn = |rng: &mut rand_chacha::ChaCha8Rng| AttentionWeights {
            wq: glorot(rng, d, d),
            wk: glorot(rng, d, d),
            wv: glorot(rng, d, d),
            wo: glorot(rng, d, d),
        };
        let ffn = |rng: &mut rand_chacha::ChaCha8Rng| FeedForward {
            w1: glorot(rng, d, h),
            b1: Mat::zeros(1, h),
            w2: glorot(rng, h, d),
            b2: Mat::zeros(1, d),
        };
        let layers = (0..config.layers)
            .map(|_| CaaLayer {
                intra: attn(&mut rng),
                intra_ffn: ffn(&mut rng),
                inter: attn(&mut rng),
                inter_ffn: ffn(&mut rng),
                relpos: RelPosEncoder {
                    w1: glorot(&mut rng, 4, d),
                    b1: Mat::zeros(1, d),
                    w2: glorot(&mut rng, d, d),
                    b2: Mat::zeros(1, d),
                },
            })
            .collect();
        let head = |rng: &mut rand_chacha::ChaCha8Rng| MatchabilityHead {
            w: glorot(rng, d, 1),
            b: Mat::from_element(1, 1, 1.0),
        };
        Ok(Self {
            config,
            layers,
            coop_head: head(&mut rng),
            ego_head: head(&mut rng),
        })
    }

    /// All-zero parameters (used as a container when deserializing).
    pub fn zeros(config: CaaConfig) -> Result<Self, MatchError> {
        config.validate()?;
        let d = config.dim;
        let h = 4 * d;
        let attn = || AttentionWeights {
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
        };
        let ffn = || FeedForward {
            w1: Mat::zeros(d, h),
            b1: Mat::zeros(1, h),
            w2: Mat::zeros(h, d),
            b2: Mat::zeros(1, d),
        };
        let layers = (0..config.layers)
            .map(|_| CaaLayer {
                intra: attn(),
                intra_ffn: ffn(),
                inter: attn(),
                inter_ffn: ffn(),
                relpos: RelPosEncoder {
                    w1: Mat::zeros(4, d),
                    b1: Mat::zeros(1, d),
                    w2: Mat::zeros(d, d),
                    b2: Mat::zeros(1, d),
                },
            })
            .collect();
        let head = || MatchabilityHead {
            w: Mat::zeros(d, 1),
            b: Mat::zeros(1, 1),
        };
        Ok(Self {
            config,
            layers,
            coop_head: head(),
            ego_head: head(),
        })
    }

    pub fn config(&self) -> CaaConfig {
        self.config
    }

    /// Named tensors in declaration order.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{l}");
            out.push((format!("{p}.intra.wq"), &layer.intra.wq));
            out.push((format!("{p}.intra.wk"), &layer.intra.wk));
            out.push((format!("{p}.intra.wv"), &layer.intra.wv));
            out.push((format!("{p}.intra.wo"), &layer.intra.wo));
            out.push((format!("{p}.intra_ffn.w1"), &layer.intra_ffn.w1));
            out.push((format!("{p}.intra_ffn.b1"), &layer.intra_ffn.b1));
            out.push((format!("{p}.intra_ffn.w2"), &layer.intra_ffn.w2));
            out.push((format!("{p}.intra_ffn.b2"), &layer.intra_ffn.b2));
            out.push((format!("{p}.inter.wq"), &layer.inter.wq));
            out.push((format!("{p}.inter.wk"), &layer.inter.wk));
            out.push((format!("{p}.inter.wv"), &layer.inter.wv));
            out.push((format!("{p}.inter.wo"), &layer.inter.wo));
            out.push((format!("{p}.inter_ffn.w1"), &layer.inter_ffn.w1));
            out.push((format!("{p}.inter_ffn.b1"), &layer.inter_ffn.b1));
            out.push((format!("{p}.inter_ffn.w2"), &layer.inter_ffn.w2));
            out.push((format!("{p}.inter_ffn.b2"), &layer.inter_ffn.b2));
            out.push((format!("{p}.relpos.w1"), &layer.relpos.w1));
            out.push((format!("{p}.relpos.b1"), &layer.relpos.b1));
            out.push((format!("{p}.relpos.w2"), &layer.relpos.w2));
            out.push((format!("{p}.relpos.b2"), &layer.relpos.b2));
        }
        out.push(("coop_head.w".to_string(), &self.coop_head.w));
        out.push(("coop_head.b".to_string(), &self.coop_head.b));
        out.push(("ego_head.w".to_string(), &self.ego_head.w));
        out.push(("ego_head.b".to_string(), &self.ego_head.b));
        out
    }

    /// Visit tensors mutably, in the same order as [`CaaParams::tensors`].
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut Mat)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{l}");
            f(&format!("{p}.intra.wq"), &mut layer.intra.wq);
            f(&format!("{p}.intra.wk"), &mut layer.intra.wk);
            f(&format!("{p}.intra.wv"), &mut layer.intra.wv);
            f(&format!("{p}.intra.wo"), &mut layer.intra.wo);
            f(&format!("{p}.intra_ffn.w1"), &mut layer.intra_ffn.w1);
            f(&format!("{p}.intra_ffn.b1"), &mut layer.intra_ffn.b1);
            f(&format!("{p}.intra_ffn.w2"), &mut layer.intra_ffn.w2);
            f(&format!("{p}.intra_ffn.b2"), &mut layer.intra_ffn.b2);
            f(&format!("{p}.inter.wq"), &mut layer.inter.wq);
            f(&format!("{p}.inter.wk"), &mut layer.inter.wk);
            f(&format!("{p}.inter.wv"), &mut layer.inter.wv);
            f(&format!("{p}.inter.wo"), &mut layer.inter.wo);
            f(&format!("{p}.inter_ffn.w1"), &mut layer.inter_ffn.w1);
            f(&format!("{p}.inter_ffn.b1"), &mut layer.inter_ffn.b1);
            f(&format!("{p}.inter_ffn.w2"), &mut layer.inter_ffn.w2);
            f(&format!("{p}.inter_ffn.b2"), &mut layer.inter_ffn.b2);
            f(&format!("{p}.relpos.w1"), &mut layer.relpos.w1);
            f(&format!("{p}.relpos.b1"), &mut layer.relpos.b1);
            f(&format!("{p}.relpos.w2"), &mut layer.relpos.w2);
            f(&format!("{p}.relpos.b2"), &mut layer.relpos.b2);
        }
        f("coop_head.w", &mut self.coop_head.w);
        f("coop_head.b", &mut self.coop_head.b);
        f("ego_head.w", &mut self.ego_head.w);
        f("ego_head.b", &mut self.ego_head.b);
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Matching hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaaMatchConfig {
    /// Acceptance threshold on the scaled assignment score, in (0, 1).
    pub tau: f64,
    /// Sinkhorn temperature.
    pub temperature: f64,
    pub sinkhorn_iters: usize,
}

impl Default for CaaMatchConfig {
    fn default() -> Self {
        Self {
            tau: TAU_BALANCED,
            temperature: 0.1,
            sinkhorn_iters: 20,
        }
    }
}

impl CaaMatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(MatchError::InvalidParameter("tau must be in (0, 1)"));
        }
        if !(self.temperature > 0.0) {
            return Err(MatchError::InvalidParameter("temperature must be > 0"));
        }
        if self.sinkhorn_iters == 0 {
            return Err(MatchError::InvalidParameter("sinkhorn_iters must be >= 1"));
        }
        Ok(())
    }
}

/// Number of tokens in the inter-agent attention pool for the given set
/// sizes: every agent's queries plus the ego queries.
pub fn inter_pool_size(ego_len: usize, coop_lens: &[usize]) -> usize {
    ego_len + coop_lens.iter().sum::<usize>()
}

pub(crate) struct ParamVars {
    pub layers: Vec<LayerVars>,
    pub coop_head: (Var, Var),
    pub ego_head: (Var, Var),
    /// All parameter vars in `tensors()` order.
    pub ordered: Vec<Var>,
    pub config: CaaConfig,
}

pub(crate) struct AttnVars {
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
}

pub(crate) struct FfnVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

pub(crate) struct RelPosVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

pub(crate) struct LayerVars {
    intra: AttnVars,
    intra_ffn: FfnVars,
    inter: AttnVars,
    inter_ffn: FfnVars,
    relpos: RelPosVars,
}

/// Record every parameter tensor on the tape, preserving `tensors()` order.
pub(crate) fn insert_params(tape: &mut Tape, params: &CaaParams) -> ParamVars {
    let mut ordered = Vec::new();
    let mut put = |tape: &mut Tape, m: &Mat| {
        let v = tape.param(m.clone());
        ordered.push(v);
        v
    };
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let intra = AttnVars {
            wq: put(tape, &layer.intra.wq),
            wk: put(tape, &layer.intra.wk),
            wv: put(tape, &layer.intra.wv),
            wo: put(tape, &layer.intra.wo),
        };
        let intra_ffn = FfnVars {
            w1: put(tape, &layer.intra_ffn.w1),
            b1: put(tape, &layer.intra_ffn.b1),
            w2: put(tape, &layer.intra_ffn.w2),
            b2: put(tape, &layer.intra_ffn.b2),
        };
        let inter = AttnVars {
            wq: put(tape, &layer.inter.wq),
            wk: put(tape, &layer.inter.wk),
            wv: put(tape, &layer.inter.wv),
            wo: put(tape, &layer.inter.wo),
        };
        let inter_ffn = FfnVars {
            w1: put(tape, &layer.inter_ffn.w1),
            b1: put(tape, &layer.inter_ffn.b1),
            w2: put(tape, &layer.inter_ffn.w2),
            b2: put(tape, &layer.inter_ffn.b2),
        };
        let relpos = RelPosVars {
            w1: put(tape, &layer.relpos.w1),
            b1: put(tape, &layer.relpos.b1),
            w2: put(tape, &layer.relpos.w2),
            b2: put(tape, &layer.relpos.b2),
        };
        layers.push(LayerVars {
            intra,
            intra_ffn,
            inter,
            inter_ffn,
            relpos,
        });
    }
    let coop_head = (put(tape, &params.coop_head.w), put(tape, &params.coop_head.b));
    let ego_head = (put(tape, &params.ego_head.w), put(tape, &params.ego_head.b));
    ParamVars {
        layers,
        coop_head,
        ego_head,
        ordered,
        config: params.config,
    }
}

/// One query set staged for the forward pass.
pub(crate) struct SetOnTape {
    pub desc: Var,
    /// `(n²)×4` pairwise relative-position features, row `i·n + j` holding
    /// `(Δx, Δy, Δz, ‖Δ‖)` of `position[j] − position[i]`.
    pub relfeat: Option<Var>,
    pub n: usize,
}

/// Stage a query set: descriptors as a constant matrix plus relative-position
/// features.
pub(crate) fn stage_set(tape: &mut Tape, queries: &[Query], dim: usize) -> Result<SetOnTape, MatchError> {
    let n = queries.len();
    for q in queries {
        if q.descriptor.len() != dim {
            return Err(MatchError::DimensionMismatch {
                what: "query descriptor",
                expected: dim,
                actual: q.descriptor.len(),
            });
        }
    }
    let desc = Mat::from_fn(n, dim, |i, j| queries[i].descriptor[j]);
    let desc = tape.constant(desc);
    let relfeat = if n > 0 {
        let mut feat = Mat::zeros(n * n, 4);
        for i in 0..n {
            for j in 0..n {
                let d = queries[j].position - queries[i].position;
                let row = i * n + j;
                feat[(row, 0)] = d.x / REL_POS_SCALE_M;
                feat[(row, 1)] = d.y / REL_POS_SCALE_M;
                feat[(row, 2)] = d.z / REL_POS_SCALE_M;
                feat[(row, 3)] = d.norm() / REL_POS_SCALE_M;
            }
        }
        Some(tape.constant(feat))
    } else {
        None
    };
    Ok(SetOnTape { desc, relfeat, n })
}

fn attention_block(
    tape: &mut Tape,
    w: &AttnVars,
    relbias: Option<(Var, &RelPosVars)>,
    x: Var,
    config: &CaaConfig,
) -> Var {
    let d = config.dim;
    let heads = config.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = tape.matmul(x, w.wq);
    let k = tape.matmul(x, w.wk);
    let v = tape.matmul(x, w.wv);
    let r = relbias.map(|(feat, rp)| {
        let h = tape.matmul(feat, rp.w1);
        let h = tape.add_row_broadcast(h, rp.b1);
        let h = tape.relu(h);
        let r = tape.matmul(h, rp.w2);
        tape.add_row_broadcast(r, rp.b2)
    });

    let mut head_outs = Vec::with_capacity(heads);
    for hi in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, hi * dh, dh),
                tape.slice_cols(k, hi * dh, dh),
                tape.slice_cols(v, hi * dh, dh),
            )
        };
        let kt = tape.transpose(kh);
        let dots = tape.matmul(qh, kt);
        let mut logits = tape.scale(dots, scale);
        if let Some(rv) = r {
            let rh = if heads == 1 {
                rv
            } else {
                tape.slice_cols(rv, hi * dh, dh)
            };
            let bias = tape.pair_bias(qh, rh);
            let bias = tape.scale(bias, scale);
            logits = tape.add(logits, bias);
        }
        let attn = tape.softmax_rows(logits);
        head_outs.push(tape.matmul(attn, vh));
    }
    let merged = if heads == 1 {
        head_outs[0]
    } else {
        tape.concat_cols(&head_outs)
    };
    let out = tape.matmul(merged, w.wo);
    tape.add(x, out)
}

fn ffn_block(tape: &mut Tape, f: &FfnVars, x: Var) -> Var {
    let h = tape.matmul(x, f.w1);
    let h = tape.add_row_broadcast(h, f.b1);
    let h = tape.relu(h);
    let y = tape.matmul(h, f.w2);
    let y = tape.add_row_broadcast(y, f.b2);
    tape.add(x, y)
}

/// The full refinement stack over all staged sets (index 0 is the ego set).
pub(crate) fn refine_on_tape(tape: &mut Tape, pv: &ParamVars, sets: &[SetOnTape]) -> Vec<Var> {
    let mut descs: Vec<Var> = sets.iter().map(|s| s.desc).collect();
    for layer in &pv.layers {
        for (i, set) in sets.iter().enumerate() {
            if set.n == 0 {
                continue;
            }
            let rel = set.relfeat.expect("non-empty set has relfeat");
            let x = attention_block(tape, &layer.intra, Some((rel, &layer.relpos)), descs[i], &pv.config);
            descs[i] = ffn_block(tape, &layer.intra_ffn, x);
        }
        let occupied: Vec<usize> = (0..sets.len()).filter(|&i| sets[i].n > 0).collect();
        if occupied.is_empty() {
            continue;
        }
        let parts: Vec<Var> = occupied.iter().map(|&i| descs[i]).collect();
        let all = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_rows(&parts)
        };
        let all = attention_block(tape, &layer.inter, None, all, &pv.config);
        let all = ffn_block(tape, &layer.inter_ffn, all);
        if parts.len() == 1 {
            descs[occupied[0]] = all;
        } else {
            let mut at = 0;
            for &i in &occupied {
                descs[i] = tape.slice_rows(all, at, sets[i].n);
                at += sets[i].n;
            }
        }
    }
    descs
}

/// Refined descriptors for the ego set and each cooperative set.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSets {
    pub ego: Mat,
    pub coop: Vec<Mat>,
}

/// Run the refinement stack and return the refined descriptor matrices.
///
/// With `layers = 0` the outputs equal the inputs.
pub fn caa_refine(
    params: &CaaParams,
    ego: &[Query],
    coop_sets: &[Vec<Query>],
) -> Result<RefinedSets, MatchError> {
    let dim = params.config.dim;
    let mut tape = Tape::new();
    let pv = insert_params(&mut tape, params);
    let mut sets = Vec::with_capacity(1 + coop_sets.len());
    sets.push(stage_set(&mut tape, ego, dim)?);
    for coop in coop_sets {
        sets.push(stage_set(&mut tape, coop, dim)?);
    }
    let refined = refine_on_tape(&mut tape, &pv, &sets);
    let values: Vec<Mat> = refined.iter().map(|v| tape.value(*v).clone()).collect();
    let mut iter = values.into_iter();
    let ego_refined = iter.next().expect("ego set present");
    Ok(RefinedSets {
        ego: ego_refined,
        coop: iter.collect(),
    })
}

/// Matchability scores σ = logistic(head(descriptor)) for each row.
pub(crate) fn matchability(desc: &Mat, head: &MatchabilityHead) -> Vec<f64> {
    let logits = desc * &head.w;
    (0..logits.nrows())
        .map(|i| {
            let x = logits[(i, 0)] + head.b[(0, 0)];
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
        .collect()
}

/// Match every cooperative set against the ego set.
///
/// Per cooperative agent: affinity = refined inner products, Sinkhorn
/// normalization, matchability scaling, then mutual-argmax + τ filtering
/// (ties break to the lowest index). The result is injective per agent.
pub fn caa_match(
    params: &CaaParams,
    ego: &[Query],
    coop_sets: &[Vec<Query>],
    config: &CaaMatchConfig,
) -> Result<Vec<MatchResult>, MatchError> {
    config.validate()?;
    let refined = caa_refine(params, ego, coop_sets)?;
    let sigma_ego = matchability(&refined.ego, &params.ego_head);
    let mut results = Vec::with_capacity(coop_sets.len());
    for (coop, coop_refined) in coop_sets.iter().zip(&refined.coop) {
        let n = coop.len();
        let m = ego.len();
        if n == 0 || m == 0 {
            results.push(MatchResult::from_pairs(vec![], n, m));
            continue;
        }
        let affinity = coop_refined * refined.ego.transpose();
        let assignment = sinkhorn(&affinity, config.temperature, config.sinkhorn_iters)?;
        let sigma_coop = matchability(coop_refined, &params.coop_head);
        let score = Mat::from_fn(n, m, |u, x| {
            sigma_coop[u] * sigma_ego[x] * assignment[(u, x)]
        });
        let pairs = mutual_argmax_pairs(&score, config.tau);
        let result = MatchResult::from_pairs(pairs, n, m);
        debug_assert!(result.validate(n, m).is_ok());
        results.push(result);
    }
    Ok(results)
}

/// Mutual-argmax filtering with a score threshold; ties break to the lowest
/// index so results are deterministic.
fn mutual_argmax_pairs(score: &Mat, tau: f64) -> Vec<MatchPair> {
    let (n, m) = score.shape();
    let row_best: Vec<usize> = (0..n)
        .map(|u| {
            let mut best = 0;
            for x in 1..m {
                if score[(u, x)] > score[(u, best)] {
                    best = x;
                }
            }
            best
        })
        .collect();
    let col_best: Vec<usize> = (0..m)
        .map(|x| {
            let mut best = 0;
            for u in 1..n {
                if score[(u, x)] > score[(best, x)] {
                    best = u;
                }
            }
            best
        })
        .collect();
    let mut pairs = Vec::new();
    for u in 0..n {
        let x = row_best[u];
        if col_best[x] == u && score[(u, x)] >= tau {
            pairs.push(MatchPair {
                coop_index: u,
                ego_index: x,
                score: score[(u, x)],
            });
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    pub(crate) fn query_with(descriptor: Vec<f64>, position: Vec3) -> Query {
        Query {
            owner_agent: 0,
            position,
            size: Vec3::new(4.0, 2.0, 1.5),
            descriptor,
            confidence: 1.0,
            gt_object_id: None,
        }
    }

    fn random_queries(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Query> {
        (0..n)
            .map(|_| {
                let mut d: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                d.iter_mut().for_each(|x| *x /= norm);
                query_with(
                    d,
                    Vec3::new(
                        rng.random_range(-40.0..40.0),
                        rng.random_range(-40.0..40.0),
                        rng.random_range(0.0..2.0),
                    ),
                )
            })
            .collect()
    }

    #[test]
    fn zero_layers_is_identity() {
        let params = CaaParams::init(
            CaaConfig {
                layers: 0,
                dim: 8,
                heads: 1,
            },
            3,
        )
        .unwrap();
        let mut rng = crate::seeds::rng(4);
        let ego = random_queries(&mut rng, 3, 8);
        let coop = vec![random_queries(&mut rng, 2, 8)];
        let refined = caa_refine(&params, &ego, &coop).unwrap();
        for (i, q) in ego.iter().enumerate() {
            for j in 0..8 {
                assert_eq!(refined.ego[(i, j)], q.descriptor[j]);
            }
        }
        for (i, q) in coop[0].iter().enumerate() {
            for j in 0..8 {
                assert_eq!(refined.coop[0][(i, j)], q.descriptor[j]);
            }
        }
    }

    #[test]
    fn singleton_sets_stay_finite() {
        let params = CaaParams::init(
            CaaConfig {
                layers: 2,
                dim: 8,
                heads: 2,
            },
            9,
        )
        .unwrap();
        let mut rng = crate::seeds::rng(10);
        let ego = random_queries(&mut rng, 1, 8);
        let coop = vec![random_queries(&mut rng, 1, 8)];
        let refined = caa_refine(&params, &ego, &coop).unwrap();
        assert!(refined.ego.iter().all(|x| x.is_finite()));
        assert!(refined.coop[0].iter().all(|x| x.is_finite()));
    }

    #[test]
    fn empty_sets_are_handled() {
        let params = CaaParams::init(
            CaaConfig {
                layers: 1,
                dim: 8,
                heads: 1,
            },
            9,
        )
        .unwrap();
        let mut rng = crate::seeds::rng(11);
        let ego = random_queries(&mut rng, 3, 8);
        let results = caa_match(
            &params,
            &ego,
            &[vec![], random_queries(&mut rng, 2, 8)],
            &CaaMatchConfig::default(),
        )
        .unwrap();
        assert_eq!(results.len(), 2);
        assert!(results[0].pairs.is_empty());
        assert_eq!(results[0].unmatched_ego.len(), 3);
        results[1].validate(2, 3).unwrap();
    }

    #[test]
    fn wrong_descriptor_dim_is_rejected() {
        let params = CaaParams::init(
            CaaConfig {
                layers: 1,
                dim: 8,
                heads: 1,
            },
            9,
        )
        .unwrap();
        let bad = vec![query_with(vec![0.0; 5], Vec3::zeros())];
        match caa_refine(&params, &bad, &[]) {
            Err(MatchError::DimensionMismatch { .. }) => {}
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn translating_one_agent_leaves_forward_pass_unchanged() {
        let params = CaaParams::init(
            CaaConfig {
                layers: 2,
                dim: 8,
                heads: 1,
            },
            21,
        )
        .unwrap();
        let mut rng = crate::seeds::rng(22);
        let ego = random_queries(&mut rng, 4, 8);
        let coop = random_queries(&mut rng, 5, 8);
        let refined_a = caa_refine(&params, &ego, std::slice::from_ref(&coop)).unwrap();
        let shift = Vec3::new(7.5, -3.25, 0.5);
        let coop_shifted: Vec<Query> = coop
            .iter()
            .map(|q| {
                let mut out = q.clone();
                out.position += shift;
                out
            })
            .collect();
        let refined_b = caa_refine(&params, &ego, &[coop_shifted]).unwrap();
        let diff = (&refined_a.coop[0] - &refined_b.coop[0]).abs().max();
        assert!(diff <= 1e-9, "coop refinement drifted by {diff}");
        let diff = (&refined_a.ego - &refined_b.ego).abs().max();
        assert!(diff <= 1e-9, "ego refinement drifted by {diff}");
    }

    #[test]
    fn identical_orthonormal_descriptors_match_on_the_diagonal() {
        // With orthonormal descriptors shared between the two sides and no
        // refinement interference (L = 0), mutual argmax yields the identity
        // pairing.
        let dim = 6;
        let params = CaaParams::init(
            CaaConfig {
                layers: 0,
                dim,
                heads: 1,
            },
            5,
        )
        .unwrap();
        let mut mk = |i: usize| {
            let mut d = vec![0.0; dim];
            d[i] = 1.0;
            query_with(d, Vec3::new(i as f64 * 5.0, 0.0, 0.0))
        };
        let ego: Vec<Query> = (0..4).map(&mut mk).collect();
        let coop: Vec<Query> = (0..4).map(&mut mk).collect();
        let cfg = CaaMatchConfig {
            tau: 0.1,
            ..CaaMatchConfig::default()
        };
        let results = caa_match(&params, &ego, &[coop], &cfg).unwrap();
        assert_eq!(
            results[0].predicted_pairs(),
            vec![(0, 0), (1, 1), (2, 2), (3, 3)]
        );
    }

    #[test]
    fn saturated_tau_rejects_everything() {
        let mut params = CaaParams::init(
            CaaConfig {
                layers: 0,
                dim: 4,
                heads: 1,
            },
            5,
        )
        .unwrap();
        // Force matchabilities below 1: strongly negative head bias.
        params.coop_head.b[(0, 0)] = -2.0;
        params.ego_head.b[(0, 0)] = -2.0;
        let mut rng = crate::seeds::rng(30);
        let ego = random_queries(&mut rng, 3, 4);
        let coop = vec![random_queries(&mut rng, 3, 4)];
        let cfg = CaaMatchConfig {
            tau: 1.0 - 1e-9,
            ..CaaMatchConfig::default()
        };
        let results = caa_match(&params, &ego, &coop, &cfg).unwrap();
        assert!(results[0].pairs.is_empty());
        assert_eq!(results[0].unmatched_coop.len(), 3);
        assert_eq!(results[0].unmatched_ego.len(), 3);
    }

    #[test]
    fn partition_invariant_fuzz() {
        let params = CaaParams::init(
            CaaConfig {
                layers: 1,
                dim: 6,
                heads: 1,
            },
            77,
        )
        .unwrap();
        let mut rng = crate::seeds::rng(78);
        for _ in 0..200 {
            let n_coop_sets = rng.random_range(1..4usize);
            let n_ego = rng.random_range(0..6);
            let ego = random_queries(&mut rng, n_ego, 6);
            let coop_sets: Vec<Vec<Query>> = (0..n_coop_sets)
                .map(|_| {
                    let n = rng.random_range(0..6);
                    random_queries(&mut rng, n, 6)
                })
                .collect();
            let results =
                caa_match(&params, &ego, &coop_sets, &CaaMatchConfig::default()).unwrap();
            assert_eq!(results.len(), n_coop_sets);
            for (i, res) in results.iter().enumerate() {
                res.validate(coop_sets[i].len(), ego.len()).unwrap();
            }
        }
    }

    #[test]
    fn inter_pool_counts_all_agents_plus_ego() {
        assert_eq!(inter_pool_size(10, &[10, 10, 10]), 40);
        assert_eq!(inter_pool_size(5, &[]), 5);
    }
}
