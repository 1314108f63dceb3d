//! Plain stochastic gradient descent over training examples.

use rand::seq::SliceRandom;

use super::loss::{caa_loss, CaaLossConfig, TrainingExample};
use super::{CaaParams, MatchError};

/// Train with plain SGD at a fixed learning rate over shuffled examples.
///
/// Deterministic for a fixed seed. Returns the trained parameters and the
/// per-step loss curve (loss evaluated before each update).
pub fn train_caa(
    initial: CaaParams,
    dataset: &[TrainingExample],
    steps: usize,
    learning_rate: f64,
    seed: u64,
    loss_config: &CaaLossConfig,
) -> Result<(CaaParams, Vec<f64>), MatchError> {
    if steps == 0 {
        return Err(MatchError::InvalidParameter("steps must be >= 1"));
    }
    if dataset.is_empty() {
        return Err(MatchError::InvalidParameter("dataset must be non-empty"));
    }
    let mut params = initial;
    let mut rng = crate::seeds::rng(crate::seeds::mix(seed, crate::seeds::STREAM_TRAIN));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        if step % dataset.len() == 0 {
            order.shuffle(&mut rng);
        }
        let example = &dataset[order[step % dataset.len()]];
        let (loss, grads) = caa_loss(&params, example, loss_config)?;
        if !loss.total.is_finite() {
            return Err(MatchError::DivergenceDetected {
                step,
                loss: loss.total,
            });
        }
        curve.push(loss.total);
        let mut k = 0;
        params.for_each_tensor_mut(|_, tensor| {
            *tensor -= &grads.tensors[k] * learning_rate;
            k += 1;
        });
    }
    Ok((params, curve))
}
