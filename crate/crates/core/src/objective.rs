//! Clipped weighted coverage objective and incremental evaluation state.
//!
//! F(X) = sum over units r of w_r * min(1, z_r) where z_r = sum of coverage
//! a_ur over selected candidates u. The clip makes F normalized (F of the
//! empty store is exactly 0), monotone, and submodular, which is what the
//! solver bound and the threshold writer rely on.
//!
//! Canonical evaluation order: candidates in position order, then units in
//! position order. Every reported value goes through [`value_of_positions`],
//! so two stores with the same candidate set always produce bit-identical
//! values regardless of how the search that found them accumulated state.

use std::collections::BTreeSet;

use crate::package::{PackageError, PackageIndex, Store, StoreSource};

#[derive(Debug, Clone)]
pub struct CoverageState {
    /// Accumulated coverage per unit position.
    pub z: Vec<f64>,
    /// Incrementally maintained F(X); within 1e-12 of scratch recomputation.
    pub value: f64,
    pub store: Store,
}

impl CoverageState {
    pub fn empty(idx: &PackageIndex<'_>, source: StoreSource) -> CoverageState {
        CoverageState {
            z: vec![0.0; idx.num_units()],
            value: 0.0,
            store: Store::empty(source),
        }
    }
}

/// Clipped marginal of candidate `pos` against accumulated coverage `z`.
pub(crate) fn gain_at(idx: &PackageIndex<'_>, z: &[f64], pos: usize) -> f64 {
    let mut gain = 0.0;
    for &(u, a) in &idx.cov[pos] {
        let before = z[u].min(1.0);
        let after = (z[u] + a).min(1.0);
        gain += idx.weights[u] * (after - before);
    }
    gain
}

/// Adds candidate `pos` to `z` and returns its marginal gain.
pub(crate) fn apply_at(idx: &PackageIndex<'_>, z: &mut [f64], pos: usize) -> f64 {
    let gain = gain_at(idx, z, pos);
    for &(u, a) in &idx.cov[pos] {
        z[u] += a;
    }
    gain
}

/// Canonical objective value for a set of candidate positions. Sorts a copy
/// so accumulation order never depends on the caller.
pub fn value_of_positions(idx: &PackageIndex<'_>, positions: &[usize]) -> f64 {
    let mut sorted: Vec<usize> = positions.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut z = vec![0.0; idx.num_units()];
    for &p in &sorted {
        for &(u, a) in &idx.cov[p] {
            z[u] += a;
        }
    }
    let mut value = 0.0;
    for (u, &w) in idx.weights.iter().enumerate() {
        value += w * z[u].min(1.0);
    }
    value
}

/// F(X) for a store of candidate ids. Unknown ids are an error.
pub fn coverage_value(store: &Store, idx: &PackageIndex<'_>) -> Result<f64, PackageError> {
    let positions = idx.positions_of(store)?;
    Ok(value_of_positions(idx, &positions))
}

/// Marginal gain of adding `cand_id` to the state's store.
pub fn marginal_gain(
    cand_id: &str,
    state: &CoverageState,
    idx: &PackageIndex<'_>,
) -> Result<f64, PackageError> {
    if state.store.selected.contains(cand_id) {
        return Err(PackageError::Invalid(format!(
            "candidate {cand_id:?} is already in the store"
        )));
    }
    let pos = *idx
        .cand_pos
        .get(cand_id)
        .ok_or_else(|| PackageError::UnknownCandidate(cand_id.to_string()))?;
    Ok(gain_at(idx, &state.z, pos))
}

/// Returns a new state with `cand_id` incorporated; the old state is
/// untouched. Duplicate insertion is an error.
pub fn incorporate(
    cand_id: &str,
    state: &CoverageState,
    idx: &PackageIndex<'_>,
) -> Result<CoverageState, PackageError> {
    if state.store.selected.contains(cand_id) {
        return Err(PackageError::Invalid(format!(
            "candidate {cand_id:?} is already in the store"
        )));
    }
    let pos = *idx
        .cand_pos
        .get(cand_id)
        .ok_or_else(|| PackageError::UnknownCandidate(cand_id.to_string()))?;
    let mut next = state.clone();
    next.value += apply_at(idx, &mut next.z, pos);
    next.store.selected.insert(cand_id.to_string());
    Ok(next)
}

/// Covered mass of validity-state (invalidation/abstention) units:
/// sum of min(1, z_r) over those units, unweighted.
pub fn invalidation_coverage(store: &Store, idx: &PackageIndex<'_>) -> Result<f64, PackageError> {
    let positions = idx.positions_of(store)?;
    let mut z = vec![0.0; idx.num_units()];
    for &p in &positions {
        for &(u, a) in &idx.cov[p] {
            z[u] += a;
        }
    }
    Ok(idx.validity_units.iter().map(|&u| z[u].min(1.0)).sum())
}

/// All candidate ids not yet in the store; handy for sampling tests.
pub fn remaining_ids(store: &Store, idx: &PackageIndex<'_>) -> BTreeSet<String> {
    idx.pkg
        .candidates
        .iter()
        .map(|c| c.candidate_id.clone())
        .filter(|id| !store.selected.contains(id))
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::package::test_fixtures::small_package;
    use crate::package::{
        Candidate, CandidateKind, CostRule, EvidenceUnit, Group, ObjectiveKind, Package, UnitClass,
    };
    use crate::rng::SplitMix64;
    use crate::quantize6;
    use std::collections::BTreeMap;

    #[test]
    fn empty_store_has_value_zero_exactly() {
        let pkg = small_package();
        let idx = pkg.index(CostRule::Word).unwrap();
        let v = coverage_value(&Store::empty(StoreSource::Writer), &idx).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn half_coverage_single_unit() {
        // one unit of weight 1 covered at 0.5 scores exactly 0.5
        let pkg = one_unit_package(&[("a", 0.5), ("b", 1.0)]);
        let idx = pkg.index(CostRule::Word).unwrap();
        let store = Store::from_ids(["a".to_string()], StoreSource::Writer);
        assert_eq!(coverage_value(&store, &idx).unwrap(), 0.5);
    }

    #[test]
    fn clipping_saturates_at_one() {
        let pkg = one_unit_package(&[("a", 0.8), ("b", 0.8)]);
        let idx = pkg.index(CostRule::Word).unwrap();
        let store = Store::from_ids(["a".to_string(), "b".to_string()], StoreSource::Writer);
        assert_eq!(coverage_value(&store, &idx).unwrap(), 1.0);
    }

    // Independent recomputation over ids and BTreeMaps, sharing nothing with
    // the position-indexed path.
    fn hand_sum(pkg: &Package, selected: &[&str]) -> f64 {
        let mut total = 0.0;
        for unit in &pkg.units {
            let mut z = 0.0;
            for cid in selected {
                let cand = pkg.candidate(cid).expect("known candidate");
                if let Some(&a) = cand.coverage.get(&unit.unit_id) {
                    z += a;
                }
            }
            total += unit.weight * if z < 1.0 { z } else { 1.0 };
        }
        total
    }

    #[test]
    fn matches_brute_force_recomputation_on_random_package() {
        let mut rng = SplitMix64::new(20240817);
        for trial in 0..50 {
            let pkg = random_package(&mut rng, 4, 3);
            let idx = pkg.index(CostRule::Word).unwrap();
            let ids: Vec<&str> = pkg.candidates.iter().map(|c| c.candidate_id.as_str()).collect();
            for mask in 0u32..16 {
                let subset: Vec<&str> = ids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, id)| *id)
                    .collect();
                let store =
                    Store::from_ids(subset.iter().map(|s| s.to_string()), StoreSource::Writer);
                let fast = coverage_value(&store, &idx).unwrap();
                let slow = hand_sum(&pkg, &subset);
                assert!(
                    (fast - slow).abs() < 1e-12,
                    "trial {trial} mask {mask}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn marginal_gain_definition_and_saturation() {
        let pkg = small_package();
        let idx = pkg.index(CostRule::Word).unwrap();
        let empty = CoverageState::empty(&idx, StoreSource::Writer);

        let g = marginal_gain("raw0", &empty, &idx).unwrap();
        let single = Store::from_ids(["raw0".to_string()], StoreSource::Writer);
        assert_eq!(g, coverage_value(&single, &idx).unwrap());

        // saturate u_fact and u_time, then raw0 gains nothing
        let mut state = empty;
        for id in ["fact0", "sum1"] {
            state = incorporate(id, &state, &idx).unwrap();
        }
        state.z[idx.unit_pos["u_time"]] = 1.0; // force saturation
        assert_eq!(marginal_gain("raw0", &state, &idx).unwrap(), 0.0);

        let err = marginal_gain("fact0", &state, &idx).unwrap_err();
        assert!(err.to_string().contains("already"));
    }

    #[test]
    fn incorporate_is_additive_and_order_independent() {
        let pkg = small_package();
        let idx = pkg.index(CostRule::Word).unwrap();
        let s0 = CoverageState::empty(&idx, StoreSource::Writer);
        let gain = marginal_gain("sum1", &s0, &idx).unwrap();
        let s1 = incorporate("sum1", &s0, &idx).unwrap();
        assert!((s1.value - (s0.value + gain)).abs() < 1e-15);
        assert_eq!(s0.store.selected.len(), 0, "old state untouched");

        let order_a = ["fact0", "sum1", "tomb2"];
        let order_b = ["tomb2", "fact0", "sum1"];
        let run = |order: &[&str]| {
            let mut st = CoverageState::empty(&idx, StoreSource::Writer);
            for id in order {
                st = incorporate(id, &st, &idx).unwrap();
            }
            st.value
        };
        assert!((run(&order_a) - run(&order_b)).abs() < 1e-12);

        let dup = incorporate("sum1", &s1, &idx);
        assert!(dup.is_err());
    }

    #[test]
    fn incremental_drift_stays_below_1e9() {
        let mut rng = SplitMix64::new(11);
        let pkg = random_package(&mut rng, 12, 6);
        let idx = pkg.index(CostRule::Word).unwrap();
        let mut state = CoverageState::empty(&idx, StoreSource::Writer);
        let mut inserted = Vec::new();
        for _ in 0..1_000 {
            let pool: Vec<String> = remaining_ids(&state.store, &idx).into_iter().collect();
            if pool.is_empty() {
                // rebuild from empty and keep drifting
                state = CoverageState::empty(&idx, StoreSource::Writer);
                inserted.clear();
                continue;
            }
            let pick = pool[rng.below(pool.len() as u64) as usize].clone();
            state = incorporate(&pick, &state, &idx).unwrap();
            inserted.push(pick);
            let scratch = coverage_value(&state.store, &idx).unwrap();
            assert!(
                (state.value - scratch).abs() < 1e-9,
                "drift after {} inserts",
                inserted.len()
            );
        }
    }

    #[test]
    fn invalidation_coverage_counts_validity_units_only() {
        let pkg = small_package();
        let idx = pkg.index(CostRule::Word).unwrap();
        let no_validity = Store::from_ids(["fact0".to_string()], StoreSource::Writer);
        assert_eq!(invalidation_coverage(&no_validity, &idx).unwrap(), 0.0);
        let with_tomb = Store::from_ids(["tomb2".to_string()], StoreSource::Writer);
        assert_eq!(invalidation_coverage(&with_tomb, &idx).unwrap(), 1.0);
    }

    fn one_unit_package(cands: &[(&str, f64)]) -> Package {
        let mut pkg = Package {
            package_id: "one_unit".to_string(),
            candidates: cands
                .iter()
                .enumerate()
                .map(|(i, &(id, a))| Candidate {
                    candidate_id: id.to_string(),
                    group_id: i as u32,
                    kind: CandidateKind::AtomicFact,
                    text: format!("candidate {id}"),
                    explicit_cost: None,
                    coverage: [("r".to_string(), a)].into_iter().collect(),
                })
                .collect(),
            groups: cands
                .iter()
                .enumerate()
                .map(|(i, &(id, _))| Group {
                    group_id: i as u32,
                    members: vec![id.to_string()],
                })
                .collect(),
            units: vec![EvidenceUnit {
                unit_id: "r".to_string(),
                description: "the unit".to_string(),
                class: UnitClass::Fact,
                weight: 1.0,
            }],
            objective: ObjectiveKind::Clipped,
            metadata: BTreeMap::new(),
        };
        pkg.normalize();
        pkg
    }

    pub(crate) fn random_package(rng: &mut SplitMix64, n_cands: u32, n_units: u32) -> Package {
        let units: Vec<EvidenceUnit> = (0..n_units)
            .map(|i| EvidenceUnit {
                unit_id: format!("u{i:02}"),
                description: format!("unit {i}"),
                class: if i % 3 == 2 {
                    UnitClass::Invalidation
                } else {
                    UnitClass::Fact
                },
                weight: quantize6(rng.uniform(0.1, 1.0)),
            })
            .collect();
        let candidates: Vec<Candidate> = (0..n_cands)
            .map(|i| {
                let n_cov = rng.range_u32(1, 3.min(n_units));
                let mut coverage = BTreeMap::new();
                for _ in 0..n_cov {
                    let u = rng.below(u64::from(n_units)) as u32;
                    coverage.insert(format!("u{u:02}"), quantize6(rng.uniform(0.2, 1.0)));
                }
                Candidate {
                    candidate_id: format!("c{i:02}"),
                    group_id: i / 2,
                    kind: CandidateKind::AtomicFact,
                    text: "two words".to_string(),
                    explicit_cost: None,
                    coverage,
                }
            })
            .collect();
        let mut groups: BTreeMap<u32, Vec<String>> = BTreeMap::new();
        for c in &candidates {
            groups.entry(c.group_id).or_default().push(c.candidate_id.clone());
        }
        let mut pkg = Package {
            package_id: format!("random_{n_cands}x{n_units}"),
            candidates,
            groups: groups
                .into_iter()
                .map(|(group_id, members)| Group { group_id, members })
                .collect(),
            units,
            objective: ObjectiveKind::Clipped,
            metadata: BTreeMap::new(),
        };
        pkg.normalize();
        pkg
    }
}
