//! Metrics, robustness sweeps, lift-strategy comparison, and the
//! communication cost model.

mod cost;
mod data;
mod lift;
mod sweep;

pub use cost::{cost_report, CostModelConfig, CostReport, DenseCostConfig, SparseCostConfig};
pub use data::{
    build_training_corpus, build_training_example, gt_correspondences,
    training_example_from_scene, TrainingNoise,
};
pub use lift::{strategy_comparison, LiftCompareRow, LiftNoiseModel, LIFT_CSV_HEADER};
pub use sweep::{
    default_noise_grid, make_snapshot, noise_sweep, snapshot_from_scene, ScenarioConfig, Snapshot,
    SweepRow, SWEEP_CSV_HEADER,
};

use thiserror::Error;

use crate::fusion::{Detection, FusionError};
use crate::geometry::Vec3;
use crate::matcher::MatchError;
use crate::scene::{SceneError, SceneObject};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("scenario has no high-vantage agent")]
    NoHighVantageAgent,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Association counts and the derived precision/recall/F1.
///
/// Conventions: `0/0 → 1` for precision and recall, `0/0 → 0` for F1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationMetrics {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl AssociationMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_positive: tp,
            false_positive: fp,
            false_negative: fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Compare predicted pairs against injective ground-truth pairs.
pub fn association_metrics(
    predicted: &[(usize, usize)],
    ground_truth: &[(usize, usize)],
) -> AssociationMetrics {
    let gt: std::collections::BTreeSet<(usize, usize)> = ground_truth.iter().copied().collect();
    let pred: std::collections::BTreeSet<(usize, usize)> = predicted.iter().copied().collect();
    let tp = pred.intersection(&gt).count();
    AssociationMetrics::from_counts(tp, pred.len() - tp, gt.len() - tp)
}

/// Aggregate predictions over several agents (counts are pooled before
/// computing precision/recall/F1).
pub fn association_metrics_multi(
    predicted: &[Vec<(usize, usize)>],
    ground_truth: &[Vec<(usize, usize)>],
) -> AssociationMetrics {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (p, g) in predicted.iter().zip(ground_truth) {
        let m = association_metrics(p, g);
        tp += m.true_positive;
        fp += m.false_positive;
        fn_ += m.false_negative;
    }
    AssociationMetrics::from_counts(tp, fp, fn_)
}

/// Ordered range-bucket edges in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeBuckets {
    pub edges: Vec<f64>,
}

impl Default for RangeBuckets {
    fn default() -> Self {
        Self {
            edges: vec![0.0, 50.0, 100.0, 150.0],
        }
    }
}

impl RangeBuckets {
    pub fn new(edges: Vec<f64>) -> Result<Self, EvalError> {
        if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EvalError::InvalidParameter(
                "bucket edges must be strictly increasing with at least two entries",
            ));
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bucket index for `range`; the last bucket is closed on the right.
    pub fn bucket_of(&self, range: f64) -> Option<usize> {
        let last = self.edges.len() - 1;
        if range < self.edges[0] || range > self.edges[last] {
            return None;
        }
        (0..last).find(|&i| range < self.edges[i + 1] || i == last - 1)
    }

    pub fn bounds(&self, i: usize) -> (f64, f64) {
        (self.edges[i], self.edges[i + 1])
    }
}

/// Per-bucket detection quality.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketMetrics {
    pub bucket_lo: f64,
    pub bucket_hi: f64,
    pub n_gt: usize,
    pub n_detections: usize,
    pub recall: f64,
    pub duplicate_rate: f64,
    pub position_rmse: f64,
}

/// Greedy center-distance matching of detections to ground truth per range
/// bucket (range is the horizontal distance from the ego origin).
///
/// Detections are visited in descending confidence order. A detection within
/// `match_radius` of an unclaimed ground-truth object claims it; one within
/// radius of only already-claimed objects counts as a duplicate.
/// `duplicate_rate` is duplicates divided by the bucket's ground-truth count.
pub fn detection_metrics(
    detections: &[Detection],
    gt_objects: &[SceneObject],
    buckets: &RangeBuckets,
    match_radius: f64,
) -> Result<Vec<BucketMetrics>, EvalError> {
    if !(match_radius > 0.0) {
        return Err(EvalError::InvalidParameter("match_radius must be > 0"));
    }
    let planar = |p: Vec3| (p.x * p.x + p.y * p.y).sqrt();
    let mut per_bucket_gt: Vec<Vec<usize>> = vec![Vec::new(); buckets.len()];
    for (i, o) in gt_objects.iter().enumerate() {
        if let Some(b) = buckets.bucket_of(planar(o.center_glb)) {
            per_bucket_gt[b].push(i);
        }
    }
    let mut per_bucket_det: Vec<Vec<usize>> = vec![Vec::new(); buckets.len()];
    for (i, d) in detections.iter().enumerate() {
        if let Some(b) = buckets.bucket_of(planar(d.position)) {
            per_bucket_det[b].push(i);
        }
    }

    let mut out = Vec::with_capacity(buckets.len());
    for b in 0..buckets.len() {
        let gts = &per_bucket_gt[b];
        let mut dets = per_bucket_det[b].clone();
        dets.sort_by(|&i, &j| {
            detections[j]
                .confidence
                .partial_cmp(&detections[i].confidence)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        let mut claimed = vec![false; gts.len()];
        let mut matched = 0usize;
        let mut duplicates = 0usize;
        let mut sq_err_sum = 0.0;
        for &di in &dets {
            let mut best_free: Option<(usize, f64)> = None;
            let mut near_claimed = false;
            for (k, &gi) in gts.iter().enumerate() {
                let d = (detections[di].position - gt_objects[gi].center_glb).norm();
                if d > match_radius {
                    continue;
                }
                if claimed[k] {
                    near_claimed = true;
                } else if best_free.is_none_or(|(_, bd)| d < bd) {
                    best_free = Some((k, d));
                }
            }
            match best_free {
                Some((k, d)) => {
                    claimed[k] = true;
                    matched += 1;
                    sq_err_sum += d * d;
                }
                None if near_claimed => duplicates += 1,
                None => {}
            }
        }
        let (lo, hi) = buckets.bounds(b);
        out.push(BucketMetrics {
            bucket_lo: lo,
            bucket_hi: hi,
            n_gt: gts.len(),
            n_detections: dets.len(),
            recall: if gts.is_empty() {
                1.0
            } else {
                matched as f64 / gts.len() as f64
            },
            duplicate_rate: if gts.is_empty() {
                0.0
            } else {
                duplicates as f64 / gts.len() as f64
            },
            position_rmse: if matched == 0 {
                0.0
            } else {
                (sq_err_sum / matched as f64).sqrt()
            },
        });
    }
    Ok(out)
}

/// `(x, y, series)` triple for plot-data files.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

/// Write plot triples as CSV with header `x,y,series`.
pub fn write_plot_data(
    w: &mut impl std::io::Write,
    points: &[PlotPoint],
) -> std::io::Result<()> {
    writeln!(w, "x,y,series")?;
    for p in points {
        writeln!(w, "{:.9},{:.9},{}", p.x, p.y, p.series)?;
    }
    Ok(())
}
