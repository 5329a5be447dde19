//! Budgeted selection of memory writes against a weighted coverage objective.
//!
//! A *package* freezes one evaluation problem: candidate writes grouped by the
//! experience they came from, per-candidate costs, weighted evidence units, and
//! a coverage matrix saying how much each candidate covers each unit. A *store*
//! is a subset of candidates; it is feasible when its total cost fits a budget
//! and it takes at most `k` candidates per group. The objective is clipped
//! weighted coverage, which is normalized, monotone, and submodular.
//!
//! On top of the model sit exact solvers (branch-and-bound certified by an
//! independent exhaustive enumerator), streaming write policies graded against
//! the exact optimum, a deterministic instance generator, and scoring for
//! externally produced memory stores via union packages.

pub mod generator;
pub mod objective;
pub mod package;
pub mod rng;
pub mod scoring;
pub mod solver;
pub mod writers;

/// Absolute tolerance for budget feasibility checks. Costs and budgets are
/// 6-decimal quantities; the slack only absorbs decimal-parse noise and can
/// never admit a genuinely over-budget store.
pub const BUDGET_EPS: f64 = 1e-9;

/// Rounds to 6 decimal places, the precision of every serialized number.
/// Normalizes -0.0 to 0.0 so formatting is sign-stable.
pub fn quantize6(x: f64) -> f64 {
    let q = (x * 1e6).round() / 1e6;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

/// Fixed-width 6-decimal formatting used for every serialized number.
pub fn format6(x: f64) -> String {
    format!("{:.6}", x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize6_rounds_to_sixth_decimal() {
        assert_eq!(quantize6(0.1234564), 0.123456);
        assert_eq!(quantize6(0.1234566), 0.123457);
        assert_eq!(quantize6(1.0), 1.0);
        assert_eq!(quantize6(-0.0000001), 0.0);
        assert!(quantize6(-1e-9).is_sign_positive());
    }

    #[test]
    fn format6_round_trips_quantized_values() {
        for &x in &[0.0, 0.1, 0.123456, 1.0, 17.25, 0.000001, 999.999999] {
            let q = quantize6(x);
            let s = format6(q);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, q, "round-trip failed for {s}");
        }
    }
}
