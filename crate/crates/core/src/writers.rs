//! Streaming write policies and restricted exact baselines.
//!
//! Writers see groups one at a time in experience order, may insert at most
//! one candidate per group, and never evict. The threshold family
//! (`gvt_write` and friends) admits a candidate only while its marginal
//! density clears a threshold, which is what saves budget for high-value
//! material arriving late; `density_only_write` and `recency_raw_write` are
//! the baselines that spend too early or ignore value entirely.
//!
//! The restricted solvers at the bottom are not streaming policies: they are
//! exact optima over a kind-filtered candidate pool, used as ablation
//! denominators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::{apply_at, gain_at, value_of_positions};
use crate::package::{
    is_feasible, Candidate, CandidateKind, CostRule, Group, Package, PackageError, PackageIndex,
    Store, StoreSource,
};
use crate::rng::{mix_seed, SplitMix64};
use crate::solver::SolveResult;
use crate::BUDGET_EPS;

#[derive(Debug, Error)]
pub enum WriterError {
    #[error("invalid writer parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Package(#[from] PackageError),
}

/// One decision point. `marginal` is the gain estimate that drove the
/// insertion (the true marginal for exact-information writers, the noised
/// one for `estimated_gvt_write`); 0.0 for discards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub group_id: u32,
    pub chosen: Option<String>,
    pub marginal: f64,
}

#[derive(Debug, Clone)]
pub struct WriterResult {
    pub store: Store,
    /// Canonical objective value of the final store.
    pub value: f64,
    pub method: String,
    /// Threshold in effect, for the threshold family.
    pub lambda: Option<f64>,
    pub trace: Vec<TraceEntry>,
    /// Candidates costing more than half the budget. The small-item
    /// guarantee does not cover them; they are reported, not dropped.
    pub small_item_violations: Vec<String>,
}

/// Descending threshold ladder. Geometric grids have consecutive ratio
/// (1 - epsilon) and always include their lower endpoint, so any target
/// threshold inside the bracket has a grid point within that factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    pub lambdas: Vec<f64>,
    pub epsilon: f64,
}

impl ThresholdGrid {
    pub fn single(lambda: f64) -> ThresholdGrid {
        assert!(lambda.is_finite() && lambda >= 0.0, "threshold MUST be finite and nonnegative");
        ThresholdGrid {
            lambdas: vec![lambda],
            epsilon: 0.0,
        }
    }

    pub fn geometric(lambda_max: f64, lambda_min: f64, epsilon: f64) -> Result<ThresholdGrid, WriterError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(WriterError::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max.is_finite()) {
            return Err(WriterError::InvalidParameter(format!(
                "need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        let mut lambdas = Vec::new();
        let mut lam = lambda_max;
        loop {
            lambdas.push(lam);
            if lam <= lambda_min {
                break;
            }
            lam *= 1.0 - epsilon;
            if lam < lambda_min {
                lambdas.push(lambda_min);
                break;
            }
        }
        Ok(ThresholdGrid { lambdas, epsilon })
    }

    /// Grid bracketing every useful threshold for this instance: the top is
    /// the best singleton density (no higher threshold admits anything), the
    /// bottom scales it down by epsilon / (2 n) so the ladder reaches below
    /// the densities that still matter at any budget.
    pub fn default_for(idx: &PackageIndex<'_>, epsilon: f64) -> Result<ThresholdGrid, WriterError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(WriterError::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        let zero = vec![0.0; idx.num_units()];
        let mut lambda_max = 0.0f64;
        for pos in 0..idx.num_candidates() {
            lambda_max = lambda_max.max(gain_at(idx, &zero, pos) / idx.costs[pos]);
        }
        if lambda_max <= 0.0 {
            // nothing has positive value; a zero threshold is the whole grid
            return Ok(ThresholdGrid {
                lambdas: vec![0.0],
                epsilon,
            });
        }
        let lambda_min = lambda_max * epsilon / (2.0 * idx.num_candidates() as f64);
        ThresholdGrid::geometric(lambda_max, lambda_min, epsilon)
    }
}

fn small_item_violations(idx: &PackageIndex<'_>, budget: f64) -> Vec<String> {
    (0..idx.num_candidates())
        .filter(|&p| idx.costs[p] > budget / 2.0)
        .map(|p| idx.candidate_id(p).to_string())
        .collect()
}

fn finish(
    idx: &PackageIndex<'_>,
    budget: f64,
    chosen: Vec<usize>,
    method: &str,
    lambda: Option<f64>,
    trace: Vec<TraceEntry>,
) -> WriterResult {
    let value = value_of_positions(idx, &chosen);
    let store = Store::from_ids(
        chosen.iter().map(|&p| idx.candidate_id(p).to_string()),
        StoreSource::Writer,
    );
    // single pass, one insertion per group: feasible under k = 1 by construction
    assert!(
        is_feasible(&store, idx, budget, 1).unwrap(),
        "writer produced an infeasible store"
    );
    WriterResult {
        store,
        value,
        method: method.to_string(),
        lambda,
        trace,
        small_item_violations: small_item_violations(idx, budget),
    }
}

/// Core threshold pass. Returns the result plus the accumulated marginal
/// total that grid selection compares (identical arithmetic across the
/// exact and estimated variants, so the zero-noise case degenerates
/// exactly).
fn gvt_run(idx: &PackageIndex<'_>, budget: f64, lambda: f64) -> (WriterResult, f64) {
    let mut z = vec![0.0; idx.num_units()];
    let mut chosen: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(idx.group_members.len());
    let mut spent = 0.0;
    let mut total = 0.0;
    for (g, members) in idx.group_members.iter().enumerate() {
        let mut pick: Option<(f64, usize)> = None;
        for &pos in members {
            let cost = idx.costs[pos];
            if spent + cost > budget + BUDGET_EPS {
                continue;
            }
            let gain = gain_at(idx, &z, pos);
            if gain <= 0.0 || gain / cost < lambda {
                continue;
            }
            let better = match pick {
                None => true,
                Some((gb, pb)) => {
                    gain > gb || (gain == gb && idx.candidate_id(pos) < idx.candidate_id(pb))
                }
            };
            if better {
                pick = Some((gain, pos));
            }
        }
        match pick {
            Some((gain, pos)) => {
                apply_at(idx, &mut z, pos);
                spent += idx.costs[pos];
                chosen.push(pos);
                total += gain;
                trace.push(TraceEntry {
                    group_id: idx.group_ids[g],
                    chosen: Some(idx.candidate_id(pos).to_string()),
                    marginal: gain,
                });
            }
            None => trace.push(TraceEntry {
                group_id: idx.group_ids[g],
                chosen: None,
                marginal: 0.0,
            }),
        }
    }
    (finish(idx, budget, chosen, "gvt", Some(lambda), trace), total)
}

/// Single-threshold streaming write: per group, insert the feasible
/// candidate with the largest positive marginal among those whose marginal
/// density is at least `lambda`; ties go to the smaller candidate id.
pub fn gvt_write(idx: &PackageIndex<'_>, budget: f64, lambda: f64) -> WriterResult {
    gvt_run(idx, budget, lambda).0
}

/// Runs the threshold pass at every grid point and keeps the best run.
/// Ties keep the earlier (larger) threshold.
pub fn gvt_best_over_grid(idx: &PackageIndex<'_>, budget: f64, grid: &ThresholdGrid) -> WriterResult {
    assert!(!grid.lambdas.is_empty(), "grid MUST NOT be empty");
    let mut best: Option<(f64, WriterResult)> = None;
    for &lam in &grid.lambdas {
        let (run, total) = gvt_run(idx, budget, lam);
        if best.as_ref().is_none_or(|(bt, _)| total > *bt) {
            best = Some((total, run));
        }
    }
    best.unwrap().1
}

/// Threshold writer under noisy value estimates. Every candidate's marginal
/// is multiplied by exp(sigma * N(0,1)) at each decision point; admission
/// and the per-group argmax both use the noised estimate, while the
/// coverage state advances by the true marginal. Each grid point gets its
/// own substream of `seed`, and the run with the largest noised marginal
/// total wins, so the writer never peeks at true values when selecting.
/// The reported `value` is the true objective of whatever it kept.
pub fn estimated_gvt_write(
    idx: &PackageIndex<'_>,
    budget: f64,
    grid: &ThresholdGrid,
    sigma: f64,
    seed: u64,
) -> Result<WriterResult, WriterError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(WriterError::InvalidParameter(format!(
            "sigma must be finite and nonnegative, got {sigma}"
        )));
    }
    assert!(!grid.lambdas.is_empty(), "grid MUST NOT be empty");
    let mut best: Option<(f64, WriterResult)> = None;
    for (j, &lam) in grid.lambdas.iter().enumerate() {
        let mut rng = SplitMix64::new(mix_seed(seed, j as u64));
        let mut z = vec![0.0; idx.num_units()];
        let mut chosen: Vec<usize> = Vec::new();
        let mut trace = Vec::with_capacity(idx.group_members.len());
        let mut spent = 0.0;
        let mut noised_total = 0.0;
        for (g, members) in idx.group_members.iter().enumerate() {
            let mut pick: Option<(f64, usize)> = None;
            for &pos in members {
                // one draw per candidate per decision point, before any
                // filtering, so the stream is independent of the budget
                let factor = (sigma * rng.normal()).exp();
                let cost = idx.costs[pos];
                if spent + cost > budget + BUDGET_EPS {
                    continue;
                }
                let noised = gain_at(idx, &z, pos) * factor;
                if noised <= 0.0 || noised / cost < lam {
                    continue;
                }
                let better = match pick {
                    None => true,
                    Some((gb, pb)) => {
                        noised > gb || (noised == gb && idx.candidate_id(pos) < idx.candidate_id(pb))
                    }
                };
                if better {
                    pick = Some((noised, pos));
                }
            }
            match pick {
                Some((noised, pos)) => {
                    apply_at(idx, &mut z, pos);
                    spent += idx.costs[pos];
                    chosen.push(pos);
                    noised_total += noised;
                    trace.push(TraceEntry {
                        group_id: idx.group_ids[g],
                        chosen: Some(idx.candidate_id(pos).to_string()),
                        marginal: noised,
                    });
                }
                None => trace.push(TraceEntry {
                    group_id: idx.group_ids[g],
                    chosen: None,
                    marginal: 0.0,
                }),
            }
        }
        let run = finish(idx, budget, chosen, "estimated_gvt", Some(lam), trace);
        if best.as_ref().is_none_or(|(bt, _)| noised_total > *bt) {
            best = Some((noised_total, run));
        }
    }
    Ok(best.unwrap().1)
}

/// Thresholdless baseline: per group, insert the feasible candidate with
/// the best marginal density, whatever that density is. Spends on early
/// mediocrity because nothing tells it to wait.
pub fn density_only_write(idx: &PackageIndex<'_>, budget: f64) -> WriterResult {
    let mut z = vec![0.0; idx.num_units()];
    let mut chosen: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(idx.group_members.len());
    let mut spent = 0.0;
    for (g, members) in idx.group_members.iter().enumerate() {
        let mut pick: Option<(f64, f64, usize)> = None; // (density, gain, pos)
        for &pos in members {
            let cost = idx.costs[pos];
            if spent + cost > budget + BUDGET_EPS {
                continue;
            }
            let gain = gain_at(idx, &z, pos);
            if gain <= 0.0 {
                continue;
            }
            let density = gain / cost;
            let better = match pick {
                None => true,
                Some((db, _, pb)) => {
                    density > db
                        || (density == db && idx.candidate_id(pos) < idx.candidate_id(pb))
                }
            };
            if better {
                pick = Some((density, gain, pos));
            }
        }
        match pick {
            Some((_, gain, pos)) => {
                apply_at(idx, &mut z, pos);
                spent += idx.costs[pos];
                chosen.push(pos);
                trace.push(TraceEntry {
                    group_id: idx.group_ids[g],
                    chosen: Some(idx.candidate_id(pos).to_string()),
                    marginal: gain,
                });
            }
            None => trace.push(TraceEntry {
                group_id: idx.group_ids[g],
                chosen: None,
                marginal: 0.0,
            }),
        }
    }
    finish(idx, budget, chosen, "density_only", None, trace)
}

/// Recency baseline: walk groups newest to oldest, keep each group's raw
/// span (smallest id if several) when it still fits, skip and continue when
/// it does not. Ignores the objective entirely.
pub fn recency_raw_write(idx: &PackageIndex<'_>, budget: f64) -> WriterResult {
    let mut z = vec![0.0; idx.num_units()];
    let mut chosen: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(idx.group_members.len());
    let mut spent = 0.0;
    for (g, members) in idx.group_members.iter().enumerate().rev() {
        let raw = members
            .iter()
            .copied()
            .find(|&p| idx.kind(p) == CandidateKind::RawSpan);
        let mut entry = TraceEntry {
            group_id: idx.group_ids[g],
            chosen: None,
            marginal: 0.0,
        };
        if let Some(pos) = raw {
            if spent + idx.costs[pos] <= budget + BUDGET_EPS {
                let gain = apply_at(idx, &mut z, pos);
                spent += idx.costs[pos];
                chosen.push(pos);
                entry.chosen = Some(idx.candidate_id(pos).to_string());
                entry.marginal = gain;
            }
        }
        trace.push(entry);
    }
    finish(idx, budget, chosen, "recency_raw", None, trace)
}

/// Exact optimum over the candidates that satisfy `keep`, on the same units
/// and weights. Groups left empty by the filter are dropped.
fn exact_over_subset(
    pkg: &Package,
    rule: CostRule,
    budget: f64,
    k: usize,
    keep: impl Fn(&Candidate) -> bool,
) -> Result<SolveResult, PackageError> {
    let candidates: Vec<Candidate> = pkg.candidates.iter().filter(|c| keep(c)).cloned().collect();
    let kept: std::collections::BTreeSet<&str> =
        candidates.iter().map(|c| c.candidate_id.as_str()).collect();
    let groups: Vec<Group> = pkg
        .groups
        .iter()
        .filter_map(|g| {
            let members: Vec<String> = g
                .members
                .iter()
                .filter(|m| kept.contains(m.as_str()))
                .cloned()
                .collect();
            (!members.is_empty()).then_some(Group {
                group_id: g.group_id,
                members,
            })
        })
        .collect();
    let mut sub = Package {
        package_id: pkg.package_id.clone(),
        candidates,
        groups,
        units: pkg.units.clone(),
        objective: pkg.objective,
        metadata: pkg.metadata.clone(),
    };
    sub.normalize();
    let idx = sub.index(rule)?;
    Ok(crate::solver::solve_exact_bnb(&idx, budget, k))
}

/// Exact optimum restricted to the given candidate kinds.
pub fn restricted_exact(
    pkg: &Package,
    rule: CostRule,
    budget: f64,
    k: usize,
    allowed_kinds: &[CandidateKind],
) -> Result<SolveResult, PackageError> {
    exact_over_subset(pkg, rule, budget, k, |c| allowed_kinds.contains(&c.kind))
}

/// Ablation: the best any system can do without validity machinery. Drops
/// tombstones, compound updates, and every candidate that covers a validity
/// unit.
pub fn no_tombstone_opt(
    pkg: &Package,
    rule: CostRule,
    budget: f64,
    k: usize,
) -> Result<SolveResult, PackageError> {
    exact_over_subset(pkg, rule, budget, k, |c| !c.validity_flag(pkg))
}

pub fn fact_only_opt(
    pkg: &Package,
    rule: CostRule,
    budget: f64,
    k: usize,
) -> Result<SolveResult, PackageError> {
    restricted_exact(pkg, rule, budget, k, &[CandidateKind::AtomicFact])
}

pub fn summary_only_opt(
    pkg: &Package,
    rule: CostRule,
    budget: f64,
    k: usize,
) -> Result<SolveResult, PackageError> {
    restricted_exact(pkg, rule, budget, k, &[CandidateKind::EntitySummary])
}

pub fn raw_only_opt(
    pkg: &Package,
    rule: CostRule,
    budget: f64,
    k: usize,
) -> Result<SolveResult, PackageError> {
    restricted_exact(pkg, rule, budget, k, &[CandidateKind::RawSpan])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::coverage_value;
    use crate::package::test_fixtures::small_package;
    use crate::package::{EvidenceUnit, ObjectiveKind, UnitClass};
    use crate::quantize6;
    use crate::solver::solve_exact_bnb;
    use std::collections::BTreeMap;

    fn tiny(cands: Vec<Candidate>, units: Vec<(&str, UnitClass, f64)>) -> Package {
        let mut groups: BTreeMap<u32, Vec<String>> = BTreeMap::new();
        for c in &cands {
            groups.entry(c.group_id).or_default().push(c.candidate_id.clone());
        }
        let mut pkg = Package {
            package_id: "tiny".to_string(),
            candidates: cands,
            groups: groups
                .into_iter()
                .map(|(group_id, members)| Group { group_id, members })
                .collect(),
            units: units
                .into_iter()
                .map(|(id, class, w)| EvidenceUnit {
                    unit_id: id.to_string(),
                    description: String::new(),
                    class,
                    weight: w,
                })
                .collect(),
            objective: ObjectiveKind::Clipped,
            metadata: BTreeMap::new(),
        };
        pkg.normalize();
        pkg
    }

    fn cand(id: &str, gid: u32, kind: CandidateKind, cost: f64, cov: &[(&str, f64)]) -> Candidate {
        Candidate {
            candidate_id: id.to_string(),
            group_id: gid,
            kind,
            text: "t".to_string(),
            explicit_cost: Some(cost),
            coverage: cov.iter().map(|&(u, a)| (u.to_string(), a)).collect(),
        }
    }

    #[test]
    fn threshold_write_hand_trace() {
        // a: cost 1/4, covers r at 0.5 (density 2); b: cost 1, covers r at 1
        // (density 1). At threshold 1/4 both are admissible and the raw
        // marginal picks b.
        let pkg = tiny(
            vec![
                cand("a", 0, CandidateKind::AtomicFact, 0.25, &[("r", 0.5)]),
                cand("b", 0, CandidateKind::EntitySummary, 1.0, &[("r", 1.0)]),
            ],
            vec![("r", UnitClass::Fact, 1.0)],
        );
        let idx = pkg.index(CostRule::Word).unwrap();
        let run = gvt_write(&idx, 2.0, 0.25);
        assert_eq!(run.value, 1.0);
        assert_eq!(
            run.trace,
            vec![TraceEntry {
                group_id: 0,
                chosen: Some("b".to_string()),
                marginal: 1.0
            }]
        );
        assert_eq!(run.lambda, Some(0.25));
    }

    #[test]
    fn threshold_above_every_density_writes_nothing() {
        let pkg = small_package();
        let idx = pkg.index(CostRule::Word).unwrap();
        let run = gvt_write(&idx, 100.0, 10.0);
        assert!(run.store.selected.is_empty());
        assert_eq!(run.value, 0.0);
        assert!(run.trace.iter().all(|t| t.chosen.is_none()));
    }

    #[test]
    fn saturated_units_stop_admitting() {
        // g0 fills r completely; g1's candidate then has zero marginal
        let pkg = tiny(
            vec![
                cand("early", 0, CandidateKind::AtomicFact, 1.0, &[("r", 1.0)]),
                cand("later", 1, CandidateKind::AtomicFact, 1.0, &[("r", 1.0)]),
            ],
            vec![("r", UnitClass::Fact, 1.0)],
        );
        let idx = pkg.index(CostRule::Word).unwrap();
        let run = gvt_write(&idx, 10.0, 0.1);
        assert_eq!(run.store.selected.len(), 1);
        assert!(run.store.selected.contains("early"));
        assert_eq!(run.trace[1].chosen, None);
    }

    #[test]
    fn geometric_grid_shape_and_validation() {
        let g = ThresholdGrid::geometric(1.0, 0.1, 0.5).unwrap();
        assert_eq!(g.lambdas, vec![1.0, 0.5, 0.25, 0.125, 0.1]);
        assert!(g.lambdas.windows(2).all(|w| w[0] > w[1]));
        assert!(ThresholdGrid::geometric(1.0, 0.1, 0.0).is_err());
        assert!(ThresholdGrid::geometric(1.0, 0.1, 1.0).is_err());
        assert!(ThresholdGrid::geometric(0.1, 1.0, 0.5).is_err());
        assert!(ThresholdGrid::geometric(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn default_grid_brackets_singleton_densities() {
        let pkg = small_package();
        let idx = pkg.index(CostRule::Word).unwrap();
        let grid = ThresholdGrid::default_for(&idx, 0.1).unwrap();
        // best density: tomb2 covers u_inval (weight 0.8) at cost 1 -> 0.8
        assert_eq!(grid.lambdas[0], 0.8);
        let last = *grid.lambdas.last().unwrap();
        assert!((last - 0.8 * 0.1 / (2.0 * 5.0)).abs() < 1e-15);
    }

    #[test]
    fn grid_best_beats_density_only_on_late_value() {
        // early group: low density, expensive; late group: the real value.
        // density_only burns the budget at group 0 and misses group 1.
        let pkg = tiny(
            vec![
                cand("early", 0, CandidateKind::AtomicFact, 4.0, &[("r", 0.5)]),
                cand("late", 1, CandidateKind::AtomicFact, 4.0, &[("s", 1.0)]),
            ],
            vec![("r", UnitClass::Fact, 1.0), ("s", UnitClass::Fact, 1.0)],
        );
        let idx = pkg.index(CostRule::Word).unwrap();
        let budget = 4.0;
        let myopic = density_only_write(&idx, budget);
        assert_eq!(myopic.value, 0.5);
        assert!(myopic.store.selected.contains("early"));

        let grid = ThresholdGrid::default_for(&idx, 0.1).unwrap();
        let best = gvt_best_over_grid(&idx, budget, &grid);
        assert_eq!(best.value, 1.0);
        assert!(best.store.selected.contains("late"));

        let opt = solve_exact_bnb(&idx, budget, 1);
        assert_eq!(opt.opt_value, best.value);
    }

    #[test]
    fn zero_noise_degenerates_to_grid_best() {
        let mut rng = SplitMix64::new(98765);
        for trial in 0..30 {
            let pkg = crate::objective::tests::random_package(&mut rng, 10, 6);
            let idx = pkg.index(CostRule::Word).unwrap();
            let grid = ThresholdGrid::default_for(&idx, 0.1).unwrap();
            for budget in [2.0, 5.0, 9.0] {
                let exact = gvt_best_over_grid(&idx, budget, &grid);
                let est = estimated_gvt_write(&idx, budget, &grid, 0.0, 42).unwrap();
                assert_eq!(exact.store, est.store, "trial {trial} budget {budget}");
                assert_eq!(exact.lambda, est.lambda, "trial {trial} budget {budget}");
                assert_eq!(exact.value, est.value);
            }
        }
    }

    #[test]
    fn noisy_writer_is_deterministic_in_its_seed() {
        let pkg = small_package();
        let idx = pkg.index(CostRule::Word).unwrap();
        let grid = ThresholdGrid::default_for(&idx, 0.1).unwrap();
        let a = estimated_gvt_write(&idx, 8.0, &grid, 0.5, 7).unwrap();
        let b = estimated_gvt_write(&idx, 8.0, &grid, 0.5, 7).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.trace, b.trace);
        assert!(estimated_gvt_write(&idx, 8.0, &grid, -0.1, 7).is_err());
        assert!(estimated_gvt_write(&idx, 8.0, &grid, f64::NAN, 7).is_err());
    }

    #[test]
    fn traces_are_insertion_only_and_feasible() {
        let mut rng = SplitMix64::new(24680);
        for _ in 0..40 {
            let pkg = crate::objective::tests::random_package(&mut rng, 12, 6);
            let idx = pkg.index(CostRule::Word).unwrap();
            let budget = rng.uniform(1.0, 12.0);
            let lambda = rng.uniform(0.0, 0.6);
            for run in [
                gvt_write(&idx, budget, lambda),
                density_only_write(&idx, budget),
            ] {
                assert_eq!(run.trace.len(), idx.group_members.len());
                for (i, t) in run.trace.iter().enumerate() {
                    assert_eq!(t.group_id, idx.group_ids[i]);
                    if let Some(id) = &t.chosen {
                        let pos = idx.cand_pos[id];
                        assert_eq!(idx.group_of[pos], i);
                        assert!(t.marginal > 0.0);
                    }
                }
                let inserted: Vec<&String> =
                    run.trace.iter().filter_map(|t| t.chosen.as_ref()).collect();
                assert_eq!(inserted.len(), run.store.selected.len());
                assert!(inserted.iter().all(|id| run.store.selected.contains(*id)));
                assert!(idx.store_cost(&run.store).unwrap() <= budget + BUDGET_EPS);
                assert_eq!(run.value, coverage_value(&run.store, &idx).unwrap());
            }
        }
    }

    #[test]
    fn recency_walks_newest_first_and_skips_what_does_not_fit() {
        // raw spans cost 8, 12, 8 in groups 0, 1, 2; budget 16 keeps the
        // newest (group 2), cannot fit group 1, then keeps group 0
        let pkg = tiny(
            vec![
                cand("raw_a", 0, CandidateKind::RawSpan, 8.0, &[("r", 0.3)]),
                cand("fact_a", 0, CandidateKind::AtomicFact, 1.0, &[("r", 0.9)]),
                cand("raw_b", 1, CandidateKind::RawSpan, 12.0, &[("r", 0.3)]),
                cand("raw_c", 2, CandidateKind::RawSpan, 8.0, &[("r", 0.3)]),
            ],
            vec![("r", UnitClass::Fact, 1.0)],
        );
        let idx = pkg.index(CostRule::Word).unwrap();
        let run = recency_raw_write(&idx, 16.0);
        let kept: Vec<&String> = run.store.selected.iter().collect();
        assert_eq!(kept, ["raw_a", "raw_c"]);
        assert_eq!(run.trace[0].group_id, 2);
        assert_eq!(run.trace[1].group_id, 1);
        assert_eq!(run.trace[1].chosen, None);
        assert_eq!(run.trace[2].chosen, Some("raw_a".to_string()));
    }

    #[test]
    fn restricted_optima_on_the_fixture() {
        let pkg = small_package();
        let full = solve_exact_bnb(&pkg.index(CostRule::Word).unwrap(), 8.0, 1);
        assert_eq!(quantize6(full.opt_value), 2.1); // fact0 + sum1 + tomb2

        let no_tomb = no_tombstone_opt(&pkg, CostRule::Word, 8.0, 1).unwrap();
        assert_eq!(quantize6(no_tomb.opt_value), 1.3); // fact0 + sum1
        assert!(no_tomb.opt_value < full.opt_value);
        assert!(!no_tomb.opt_store.selected.contains("tomb2"));

        let facts = fact_only_opt(&pkg, CostRule::Word, 8.0, 1).unwrap();
        assert_eq!(quantize6(facts.opt_value), 1.0);
        let sums = summary_only_opt(&pkg, CostRule::Word, 8.0, 1).unwrap();
        assert_eq!(quantize6(sums.opt_value), 0.8);
        let raws = raw_only_opt(&pkg, CostRule::Word, 8.0, 1).unwrap();
        assert_eq!(quantize6(raws.opt_value), 1.25);

        // a filter that keeps nothing still solves: empty store, zero value
        let none = restricted_exact(&pkg, CostRule::Word, 8.0, 1, &[CandidateKind::Rule]).unwrap();
        assert_eq!(none.opt_value, 0.0);
        assert!(none.opt_store.selected.is_empty());
    }

    #[test]
    fn small_item_violations_are_reported_not_dropped() {
        let pkg = small_package();
        let idx = pkg.index(CostRule::Word).unwrap();
        // budget 8: raw0 (cost 8) and sum1 (cost 4) are not small items;
        // sum1 sits exactly at half budget so only raw0 violates
        let run = gvt_write(&idx, 8.0, 0.0);
        assert_eq!(run.small_item_violations, vec!["raw0".to_string()]);
        // raw0 is still eligible when the budget admits it
        let alone = gvt_write(&pkg.index(CostRule::Word).unwrap(), 8.0, 0.15);
        assert!(alone.small_item_violations.contains(&"raw0".to_string()));
    }
}
