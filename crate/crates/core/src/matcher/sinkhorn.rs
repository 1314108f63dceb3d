//! Sinkhorn normalization in log space.
//!
//! Square affinities are alternately row- and column-normalized toward a
//! doubly stochastic matrix. Rectangular affinities are normalized as a
//! *partial* assignment: the smaller side is normalized exactly to 1 while
//! the larger side is only capped at 1 (its dual update is clamped at zero,
//! so under-full rows/columns are never scaled up). All iterations run on
//! log-domain entries, so intermediate values can never overflow.

use crate::autodiff::{Mat, Tape, Var};

use super::MatchError;

/// Sinkhorn-normalize `exp(affinity / temperature)`.
///
/// Returns the assignment matrix `P` with entries in `[0, 1]`. For square
/// inputs, `iters` rounds of alternating normalization drive row and column
/// sums to 1; rectangular inputs end with every row and column sum ≤ 1 and
/// the smaller dimension's sums equal to 1 up to convergence error.
pub fn sinkhorn(affinity: &Mat, temperature: f64, iters: usize) -> Result<Mat, MatchError> {
    if !(temperature > 0.0) {
        return Err(MatchError::InvalidParameter("temperature must be > 0"));
    }
    if iters == 0 {
        return Err(MatchError::InvalidParameter("iters must be >= 1"));
    }
    if affinity.iter().any(|x| !x.is_finite()) {
        return Err(MatchError::InvalidParameter("affinity must be finite"));
    }
    let (n, m) = affinity.shape();
    if n == 0 || m == 0 {
        return Ok(Mat::zeros(n, m));
    }
    let mut z = affinity / temperature;
    for _ in 0..iters {
        if n <= m {
            sub_rows(&mut z, false);
            sub_cols(&mut z, n < m);
        } else {
            sub_cols(&mut z, false);
            sub_rows(&mut z, true);
        }
    }
    let p = z.map(f64::exp);
    if p.iter().any(|x| !x.is_finite() || *x > 1.0 + 1e-9) {
        return Err(MatchError::NumericalOverflow);
    }
    Ok(p)
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Subtract each row's log-sum from the row; `capped` clamps the subtraction
/// at zero so rows with sum < 1 are left alone.
fn sub_rows(z: &mut Mat, capped: bool) {
    for i in 0..z.nrows() {
        let mut l = lse(z.row(i).iter().copied());
        if capped {
            l = l.max(0.0);
        }
        for j in 0..z.ncols() {
            z[(i, j)] -= l;
        }
    }
}

fn sub_cols(z: &mut Mat, capped: bool) {
    for j in 0..z.ncols() {
        let mut l = lse(z.column(j).iter().copied());
        if capped {
            l = l.max(0.0);
        }
        for i in 0..z.nrows() {
            z[(i, j)] -= l;
        }
    }
}

/// Tape-recorded version of the same iteration, returning the **log**
/// assignment matrix (so losses can consume log-probabilities directly).
///
/// Mirrors [`sinkhorn`] exactly: feeding it `affinity/temperature` and
/// exponentiating the result reproduces the plain function's output.
pub(crate) fn log_sinkhorn_on_tape(tape: &mut Tape, z0: Var, iters: usize) -> Var {
    let (n, m) = tape.value(z0).shape();
    let mut z = z0;
    for _ in 0..iters {
        if n <= m {
            let lr = tape.lse_rows(z);
            z = tape.sub_col_broadcast(z, lr);
            let lc = tape.lse_cols(z);
            let lc = if n < m { tape.relu(lc) } else { lc };
            z = tape.sub_row_broadcast(z, lc);
        } else {
            let lc = tape.lse_cols(z);
            z = tape.sub_row_broadcast(z, lc);
            let lr = tape.lse_rows(z);
            let lr = tape.relu(lr);
            z = tape.sub_col_broadcast(z, lr);
        }
    }
    z
}
