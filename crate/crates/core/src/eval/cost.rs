//! Communication cost model: dense grid transmission vs sparse queries.
//!
//! Dense bird's-eye-view features cover a square of side `2·range` at a fixed
//! cell size, so their byte rate grows quadratically with the perception
//! range. Sparse query transmission carries a fixed payload per query, so its
//! byte rate grows linearly with the number of targets and is independent of
//! range.

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseCostConfig {
    /// Perception range, meters (grid side = 2·range).
    pub range_m: f64,
    /// Grid cell size, meters.
    pub cell_size_m: f64,
    /// Feature channels per cell.
    pub channels: u32,
    pub bytes_per_value: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseCostConfig {
    pub n_queries: u32,
    pub bytes_per_query: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModelConfig {
    pub dense: DenseCostConfig,
    pub sparse: SparseCostConfig,
    /// Transmission rate, frames per second.
    pub rate_hz: f64,
}

impl CostModelConfig {
    /// Calibration used for the documented dense-vs-sparse comparison:
    /// a 100 m range on a 1 m grid with 8 one-byte channels at 10 Hz against
    /// 95 queries of 200 bytes at 10 Hz, giving a ratio of about 16.8.
    pub fn reference_calibration() -> Self {
        Self {
            dense: DenseCostConfig {
                range_m: 100.0,
                cell_size_m: 1.0,
                channels: 8,
                bytes_per_value: 1,
            },
            sparse: SparseCostConfig {
                n_queries: 95,
                bytes_per_query: 200,
            },
            rate_hz: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.dense.range_m > 0.0 && self.dense.cell_size_m > 0.0) {
            return Err(EvalError::InvalidParameter(
                "dense range and cell size must be > 0",
            ));
        }
        if self.dense.channels == 0 || self.dense.bytes_per_value == 0 {
            return Err(EvalError::InvalidParameter(
                "dense channels and bytes_per_value must be > 0",
            ));
        }
        if self.sparse.n_queries == 0 || self.sparse.bytes_per_query == 0 {
            return Err(EvalError::InvalidParameter(
                "sparse n_queries and bytes_per_query must be > 0",
            ));
        }
        if !(self.rate_hz > 0.0) {
            return Err(EvalError::InvalidParameter("rate_hz must be > 0"));
        }
        Ok(())
    }
}

/// Bytes-per-second figures for both schemes and their ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub dense_bps: f64,
    pub sparse_bps: f64,
    pub ratio: f64,
}

/// `dense = (2·range/cell)²·channels·bytes·rate`, `sparse = n·bytes·rate`.
pub fn cost_report(config: &CostModelConfig) -> Result<CostReport, EvalError> {
    config.validate()?;
    let cells_per_side = 2.0 * config.dense.range_m / config.dense.cell_size_m;
    let dense_bps = cells_per_side
        * cells_per_side
        * config.dense.channels as f64
        * config.dense.bytes_per_value as f64
        * config.rate_hz;
    let sparse_bps =
        config.sparse.n_queries as f64 * config.sparse.bytes_per_query as f64 * config.rate_hz;
    Ok(CostReport {
        dense_bps,
        sparse_bps,
        ratio: dense_bps / sparse_bps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_range_quadruples_dense_only() {
        let base = CostModelConfig::reference_calibration();
        let mut doubled = base;
        doubled.dense.range_m *= 2.0;
        let a = cost_report(&base).unwrap();
        let b = cost_report(&doubled).unwrap();
        assert_eq!(b.dense_bps, 4.0 * a.dense_bps);
        assert_eq!(b.sparse_bps, a.sparse_bps);
        assert_eq!(b.ratio, 4.0 * a.ratio);
    }

    #[test]
    fn reference_calibration_hits_published_scale() {
        let report = cost_report(&CostModelConfig::reference_calibration()).unwrap();
        assert_eq!(report.dense_bps, 3.2e6);
        assert_eq!(report.sparse_bps, 1.9e5);
        assert!(
            (report.ratio - 16.9).abs() / 16.9 < 0.2,
            "ratio {} too far from 16.9",
            report.ratio
        );
    }

    #[test]
    fn sparse_cost_is_linear_in_query_count() {
        let base = CostModelConfig::reference_calibration();
        let mut tripled = base;
        tripled.sparse.n_queries *= 3;
        let a = cost_report(&base).unwrap();
        let b = cost_report(&tripled).unwrap();
        assert_eq!(b.sparse_bps, 3.0 * a.sparse_bps);
        assert_eq!(a.ratio, 3.0 * b.ratio);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut bad = CostModelConfig::reference_calibration();
        bad.rate_hz = 0.0;
        assert!(cost_report(&bad).is_err());
    }
}
