//! Text formatting helpers shared by the line-oriented file formats.

/// Format a float with full round-trip precision.
///
/// All floats in scene files and flat records are written in scientific
/// notation with 17 fractional digits, which both exceeds the documented
/// minimum of 9 significant digits and guarantees exact `f64` round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

/// Parse a float written by [`fmt_f64`] (plain decimal forms also accepted).
pub fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("bad float {s:?}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fmt_round_trips_exactly(x in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            let s = fmt_f64(x);
            let back = parse_f64(&s).unwrap();
            prop_assert_eq!(x.to_bits(), back.to_bits());
        }
    }

    #[test]
    fn fmt_has_enough_digits() {
        let s = fmt_f64(10.0);
        assert!(s.len() >= 10, "{s}");
    }
}
