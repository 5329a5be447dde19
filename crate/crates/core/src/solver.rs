//! Certified exact optima: branch-and-bound over per-group assignments,
//! cross-checked by an independent exhaustive enumerator.
//!
//! Both solvers maximize F over stores that fit the budget and take at most
//! `k` candidates per group. They share the objective arithmetic (that is the
//! quantity under test) but no search code, and every reported value is the
//! canonical recomputation of the final store, so agreement between them is
//! bit-level whenever they select value-equal stores.
//!
//! The enumeration side plays the role of an integer-programming certificate.
//! The equivalent formulation is
//!
//! ```text
//! maximize   sum_r w_r * y_r
//! subject to y_r <= sum_u a_ur * x_u,   y_r <= 1,
//!            sum_u c_u * x_u <= B,
//!            sum_{u in G_i} x_u <= k    for every group i,
//!            x_u binary
//! ```
//!
//! For any fixed x the optimal y_r is min(1, sum_u a_ur x_u), so the program's
//! objective equals the clipped coverage objective; a unit test checks this on
//! a tiny instance over every assignment of x.

use thiserror::Error;

use crate::objective::{gain_at, value_of_positions, CoverageState};
use crate::package::{PackageError, PackageIndex, Store, StoreSource};
use crate::{quantize6, BUDGET_EPS};

/// Slack for bound-based pruning. Keeps subtrees whose bound sits within
/// floating-point noise of the incumbent, so value ties are always explored
/// and the lexicographic tie-break is exact.
const PRUNE_MARGIN: f64 = 1e-9;

/// Default cap on the assignment product accepted by the enumerator.
pub const DEFAULT_MAX_ASSIGNMENTS: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("enumeration scope exceeded: {assignments} per-group assignments > cap {cap}; shrink the instance or raise the cap")]
    Scope { assignments: u128, cap: u64 },
    #[error(transparent)]
    Package(#[from] PackageError),
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub opt_value: f64,
    pub opt_store: Store,
    pub nodes_explored: u64,
    pub pruned_by_bound: u64,
    pub k: usize,
    pub budget: f64,
    /// Always true: both solvers are exact. Kept explicit because ratio
    /// reports must carry denominator provenance.
    pub exact: bool,
    pub solver: &'static str,
}

/// One certification comparison. Values are canonically rounded to 6
/// decimals before the equality check, matching serialization precision.
#[derive(Debug, Clone)]
pub struct CertificationRow {
    pub package_id: String,
    pub budget: f64,
    pub k: usize,
    pub bnb_value: f64,
    pub audit_value: f64,
    pub equal: bool,
    pub max_diff: f64,
    pub nodes_explored: u64,
}

#[derive(Clone, Copy, PartialEq)]
pub(crate) enum BoundMode {
    Admissible,
    /// Test-only corruption: claims no completion can gain anything, which
    /// collapses the search to its first branch. Used as a negative control
    /// to prove certification catches a broken solver.
    #[cfg_attr(not(test), allow(dead_code))]
    CorruptNoGain,
}

struct Incumbent {
    value: f64,
    ids: Vec<String>, // sorted candidate ids
}

impl Incumbent {
    /// Replaces on strictly larger canonical value, or on exact tie with a
    /// lexicographically smaller sorted id sequence.
    fn offer(&mut self, value: f64, ids: Vec<String>) -> bool {
        if value > self.value || (value == self.value && ids < self.ids) {
            self.value = value;
            self.ids = ids;
            true
        } else {
            false
        }
    }
}

fn sorted_ids(idx: &PackageIndex<'_>, positions: &[usize]) -> Vec<String> {
    let mut ids: Vec<String> = positions.iter().map(|&p| idx.candidate_id(p).to_string()).collect();
    ids.sort();
    ids
}

/// All subsets of `members` with 1..=k elements, as sorted position lists.
/// Written twice on purpose: the enumerator has its own copy so the two
/// solvers share no search machinery.
fn bnb_subsets(members: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let n = members.len();
    let mut stack: Vec<usize> = Vec::new();
    fn rec(members: &[usize], start: usize, k: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !stack.is_empty() {
            out.push(stack.clone());
        }
        if stack.len() == k {
            return;
        }
        for i in start..members.len() {
            stack.push(members[i]);
            rec(members, i + 1, k, stack, out);
            stack.pop();
        }
    }
    rec(members, 0, k.min(n), &mut stack, &mut out);
    out
}

/// Fractional-knapsack fill over current marginals, ignoring the group
/// constraint. Admissible upper bound on any feasible completion: marginals
/// never grow as the store grows (submodularity), dropping the matroid only
/// loosens, and the fractional fill dominates every integral fill.
fn fractional_fill(
    idx: &PackageIndex<'_>,
    z: &[f64],
    remaining: impl Iterator<Item = usize>,
    residual: f64,
) -> f64 {
    if residual <= 0.0 {
        return 0.0;
    }
    let mut items: Vec<(f64, f64, usize)> = Vec::new(); // (density, gain, pos)
    for pos in remaining {
        let gain = gain_at(idx, z, pos);
        if gain > 0.0 {
            items.push((gain / idx.costs[pos], gain, pos));
        }
    }
    items.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(&b.2)));
    let mut left = residual;
    let mut acc = 0.0;
    for (_, gain, pos) in items {
        let cost = idx.costs[pos];
        if cost <= left {
            acc += gain;
            left -= cost;
        } else {
            acc += gain * (left / cost);
            break;
        }
    }
    acc
}

/// Upper bound on the best completion of `state` using candidates from
/// `remaining` and `residual_budget` more cost.
pub fn fractional_upper_bound(
    state: &CoverageState,
    remaining: &[String],
    residual_budget: f64,
    idx: &PackageIndex<'_>,
) -> Result<f64, PackageError> {
    let mut positions = Vec::with_capacity(remaining.len());
    for id in remaining {
        let pos = *idx
            .cand_pos
            .get(id)
            .ok_or_else(|| PackageError::UnknownCandidate(id.clone()))?;
        if state.store.selected.contains(id) {
            return Err(PackageError::Invalid(format!(
                "remaining candidate {id:?} is already in the store"
            )));
        }
        positions.push(pos);
    }
    Ok(state.value + fractional_fill(idx, &state.z, positions.into_iter(), residual_budget))
}

struct BnbSearch<'a, 'p> {
    idx: &'a PackageIndex<'p>,
    budget: f64,
    choices: Vec<Vec<(f64, Vec<usize>)>>, // per group: (subset cost, subset), ordered
    incumbent: Incumbent,
    nodes: u64,
    pruned: u64,
    bound_mode: BoundMode,
    z: Vec<f64>,
    value: f64,
    chosen: Vec<usize>,
}

impl BnbSearch<'_, '_> {
    fn leaf(&mut self) {
        if self.value > self.incumbent.value - PRUNE_MARGIN {
            let canon = value_of_positions(self.idx, &self.chosen);
            let ids = sorted_ids(self.idx, &self.chosen);
            self.incumbent.offer(canon, ids);
        }
    }

    fn dfs(&mut self, g: usize, spent: f64) {
        self.nodes += 1;
        if g == self.choices.len() {
            self.leaf();
            return;
        }
        let bound = match self.bound_mode {
            BoundMode::Admissible => {
                let rest = self.choices[g..]
                    .iter()
                    .flat_map(|c| c.iter().filter(|(_, s)| s.len() == 1).map(|(_, s)| s[0]));
                self.value + fractional_fill(self.idx, &self.z, rest, self.budget - spent)
            }
            BoundMode::CorruptNoGain => self.value,
        };
        if bound < self.incumbent.value - PRUNE_MARGIN {
            self.pruned += 1;
            return;
        }
        for ci in 0..self.choices[g].len() {
            let (cost, subset) = {
                let (c, s) = &self.choices[g][ci];
                (*c, s.clone())
            };
            if spent + cost > self.budget + BUDGET_EPS {
                continue;
            }
            let mut gained = 0.0;
            for &pos in &subset {
                gained += crate::objective::apply_at(self.idx, &mut self.z, pos);
                self.chosen.push(pos);
            }
            self.value += gained;
            self.dfs(g + 1, spent + cost);
            self.value -= gained;
            for &pos in subset.iter().rev() {
                for &(u, a) in &self.idx.cov[pos] {
                    self.z[u] -= a;
                }
                self.chosen.pop();
            }
        }
        // discard branch: choose nothing from this group
        self.dfs(g + 1, spent);
    }
}

/// Greedy warm starts (by marginal density and by raw marginal) to tighten
/// the incumbent before search. Incumbent provenance does not matter: the
/// search still explores every subtree that could tie or beat it.
fn greedy_incumbent(idx: &PackageIndex<'_>, budget: f64, k: usize) -> Incumbent {
    let mut best = Incumbent {
        value: 0.0,
        ids: Vec::new(),
    };
    for by_density in [true, false] {
        let mut z = vec![0.0; idx.num_units()];
        let mut taken: Vec<usize> = Vec::new();
        let mut per_group = vec![0usize; idx.group_members.len()];
        let mut spent = 0.0;
        loop {
            let mut pick: Option<(f64, usize)> = None;
            for pos in 0..idx.num_candidates() {
                if taken.contains(&pos)
                    || per_group[idx.group_of[pos]] >= k
                    || spent + idx.costs[pos] > budget + BUDGET_EPS
                {
                    continue;
                }
                let gain = gain_at(idx, &z, pos);
                if gain <= 0.0 {
                    continue;
                }
                let score = if by_density { gain / idx.costs[pos] } else { gain };
                let better = match pick {
                    None => true,
                    Some((s, p)) => score > s || (score == s && idx.candidate_id(pos) < idx.candidate_id(p)),
                };
                if better {
                    pick = Some((score, pos));
                }
            }
            let Some((_, pos)) = pick else { break };
            crate::objective::apply_at(idx, &mut z, pos);
            spent += idx.costs[pos];
            per_group[idx.group_of[pos]] += 1;
            taken.push(pos);
        }
        let value = value_of_positions(idx, &taken);
        best.offer(value, sorted_ids(idx, &taken));
    }
    best
}

pub(crate) fn solve_bnb_with_mode(
    idx: &PackageIndex<'_>,
    budget: f64,
    k: usize,
    mode: BoundMode,
) -> SolveResult {
    assert!(k >= 1, "k MUST be at least 1");
    // Branch order: groups in experience order; within a group, subsets by
    // descending singleton-value sum with the discard branch last.
    let zero = vec![0.0; idx.num_units()];
    let mut choices = Vec::with_capacity(idx.group_members.len());
    for members in &idx.group_members {
        let mut subs: Vec<(f64, Vec<usize>)> = bnb_subsets(members, k)
            .into_iter()
            .map(|s| {
                let cost: f64 = s.iter().map(|&p| idx.costs[p]).sum();
                (cost, s)
            })
            .collect();
        let sum_singleton = |s: &[usize]| -> f64 { s.iter().map(|&p| gain_at(idx, &zero, p)).sum() };
        subs.sort_by(|a, b| {
            sum_singleton(&b.1)
                .partial_cmp(&sum_singleton(&a.1))
                .unwrap()
                .then_with(|| sorted_ids(idx, &a.1).cmp(&sorted_ids(idx, &b.1)))
        });
        choices.push(subs);
    }

    let incumbent = match mode {
        BoundMode::Admissible => greedy_incumbent(idx, budget, k),
        BoundMode::CorruptNoGain => Incumbent {
            value: 0.0,
            ids: Vec::new(),
        },
    };
    let mut search = BnbSearch {
        idx,
        budget,
        choices,
        incumbent,
        nodes: 0,
        pruned: 0,
        bound_mode: mode,
        z: vec![0.0; idx.num_units()],
        value: 0.0,
        chosen: Vec::new(),
    };
    search.dfs(0, 0.0);
    SolveResult {
        opt_value: search.incumbent.value,
        opt_store: Store::from_ids(search.incumbent.ids.iter().cloned(), StoreSource::Solver),
        nodes_explored: search.nodes,
        pruned_by_bound: search.pruned,
        k,
        budget,
        exact: true,
        solver: "bnb",
    }
}

/// Exact optimum by branch-and-bound with an admissible fractional bound.
/// Deterministic; ties between optimal stores resolve to the
/// lexicographically smallest sorted candidate-id sequence.
pub fn solve_exact_bnb(idx: &PackageIndex<'_>, budget: f64, k: usize) -> SolveResult {
    solve_bnb_with_mode(idx, budget, k, BoundMode::Admissible)
}

fn count_assignments(idx: &PackageIndex<'_>, k: usize) -> u128 {
    let mut product: u128 = 1;
    for members in &idx.group_members {
        let n = members.len() as u128;
        let mut choices: u128 = 1; // discard
        let mut comb: u128 = 1;
        for j in 1..=(k.min(members.len()) as u128) {
            comb = comb * (n - j + 1) / j;
            choices += comb;
        }
        product = product.saturating_mul(choices);
        if product > u128::from(u64::MAX) {
            return product;
        }
    }
    product
}

/// Independent exhaustive certifier: walks every per-group assignment
/// (subsets of size <= k plus discard), filters by budget, and keeps the
/// maximum with the same lexicographic tie rule as the primary solver.
/// `nodes_explored` counts complete assignments evaluated.
pub fn solve_exact_enumeration(
    idx: &PackageIndex<'_>,
    budget: f64,
    k: usize,
    max_assignments: u64,
) -> Result<SolveResult, SolverError> {
    assert!(k >= 1, "k MUST be at least 1");
    let assignments = count_assignments(idx, k);
    if assignments > u128::from(max_assignments) {
        return Err(SolverError::Scope {
            assignments,
            cap: max_assignments,
        });
    }

    // Per-group choice lists built by its own combination walker.
    let mut group_choices: Vec<Vec<(f64, Vec<usize>)>> = Vec::new();
    for members in &idx.group_members {
        let mut list: Vec<(f64, Vec<usize>)> = vec![(0.0, Vec::new())];
        let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..k.min(members.len()) {
            let mut next = Vec::new();
            for base in &frontier {
                let start = base.last().map_or(0, |&l| {
                    members.iter().position(|&m| m == l).unwrap() + 1
                });
                for &m in &members[start..] {
                    let mut s = base.clone();
                    s.push(m);
                    list.push((s.iter().map(|&p| idx.costs[p]).sum(), s.clone()));
                    next.push(s);
                }
            }
            frontier = next;
        }
        group_choices.push(list);
    }

    struct Walker<'a, 'p> {
        idx: &'a PackageIndex<'p>,
        budget: f64,
        choices: &'a [Vec<(f64, Vec<usize>)>],
        z: Vec<f64>,
        value: f64,
        chosen: Vec<usize>,
        leaves: u64,
        best: Incumbent,
    }
    impl Walker<'_, '_> {
        fn walk(&mut self, g: usize, spent: f64) {
            if g == self.choices.len() {
                self.leaves += 1;
                if self.value > self.best.value - PRUNE_MARGIN {
                    let canon = value_of_positions(self.idx, &self.chosen);
                    let ids = sorted_ids(self.idx, &self.chosen);
                    self.best.offer(canon, ids);
                }
                return;
            }
            for (cost, subset) in &self.choices[g] {
                if spent + cost > self.budget + BUDGET_EPS {
                    continue;
                }
                let mut gained = 0.0;
                for &pos in subset {
                    for &(u, a) in &self.idx.cov[pos] {
                        let before = self.z[u].min(1.0);
                        let after = (self.z[u] + a).min(1.0);
                        gained += self.idx.weights[u] * (after - before);
                        self.z[u] += a;
                    }
                    self.chosen.push(pos);
                }
                self.value += gained;
                self.walk(g + 1, spent + cost);
                self.value -= gained;
                for &pos in subset.iter().rev() {
                    for &(u, a) in &self.idx.cov[pos] {
                        self.z[u] -= a;
                    }
                    self.chosen.pop();
                }
            }
        }
    }
    let mut w = Walker {
        idx,
        budget,
        choices: &group_choices,
        z: vec![0.0; idx.num_units()],
        value: 0.0,
        chosen: Vec::new(),
        leaves: 0,
        best: Incumbent {
            value: 0.0,
            ids: Vec::new(),
        },
    };
    w.walk(0, 0.0);
    Ok(SolveResult {
        opt_value: w.best.value,
        opt_store: Store::from_ids(w.best.ids.iter().cloned(), StoreSource::Solver),
        nodes_explored: w.leaves,
        pruned_by_bound: 0,
        k,
        budget,
        exact: true,
        solver: "enumeration",
    })
}

pub(crate) fn certify_with_mode(
    idx: &PackageIndex<'_>,
    budget: f64,
    k: usize,
    max_assignments: u64,
    mode: BoundMode,
) -> Result<CertificationRow, SolverError> {
    let audit = solve_exact_enumeration(idx, budget, k, max_assignments)?;
    let bnb = solve_bnb_with_mode(idx, budget, k, mode);
    let bnb_value = quantize6(bnb.opt_value);
    let audit_value = quantize6(audit.opt_value);
    let max_diff = (bnb_value - audit_value).abs();
    Ok(CertificationRow {
        package_id: idx.pkg.package_id.clone(),
        budget,
        k,
        bnb_value,
        audit_value,
        equal: max_diff == 0.0,
        max_diff,
        nodes_explored: bnb.nodes_explored,
    })
}

/// Runs both solvers and compares canonically rounded objective values.
/// Equality is on value only: tied optimal stores with different ids still
/// certify.
pub fn certify(
    idx: &PackageIndex<'_>,
    budget: f64,
    k: usize,
    max_assignments: u64,
) -> Result<CertificationRow, SolverError> {
    certify_with_mode(idx, budget, k, max_assignments, BoundMode::Admissible)
}
