//! Package data model: candidates, groups, evidence units, cost rules,
//! feasibility, and canonical serialization.
//!
//! A package is immutable once validated; evaluation never mutates one. The
//! canonical JSON form sorts every id and key and prints every number with 6
//! decimals, so identical packages serialize to identical bytes and a
//! serialize-parse-serialize cycle is the identity on bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use crate::{format6, BUDGET_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CandidateKind {
    RawSpan,
    AtomicFact,
    EntitySummary,
    GraphEdge,
    TemporalEvent,
    Rule,
    Tombstone,
    CompoundUpdate,
    /// Reserved for union-package additions; the generator never emits it.
    External,
}

impl CandidateKind {
    pub const ALL: [CandidateKind; 9] = [
        CandidateKind::RawSpan,
        CandidateKind::AtomicFact,
        CandidateKind::EntitySummary,
        CandidateKind::GraphEdge,
        CandidateKind::TemporalEvent,
        CandidateKind::Rule,
        CandidateKind::Tombstone,
        CandidateKind::CompoundUpdate,
        CandidateKind::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CandidateKind::RawSpan => "raw_span",
            CandidateKind::AtomicFact => "atomic_fact",
            CandidateKind::EntitySummary => "entity_summary",
            CandidateKind::GraphEdge => "graph_edge",
            CandidateKind::TemporalEvent => "temporal_event",
            CandidateKind::Rule => "rule",
            CandidateKind::Tombstone => "tombstone",
            CandidateKind::CompoundUpdate => "compound_update",
            CandidateKind::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<CandidateKind> {
        CandidateKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum UnitClass {
    Fact,
    Temporal,
    Preference,
    Invalidation,
    Abstention,
    Provenance,
}

impl UnitClass {
    pub const ALL: [UnitClass; 6] = [
        UnitClass::Fact,
        UnitClass::Temporal,
        UnitClass::Preference,
        UnitClass::Invalidation,
        UnitClass::Abstention,
        UnitClass::Provenance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UnitClass::Fact => "fact",
            UnitClass::Temporal => "temporal",
            UnitClass::Preference => "preference",
            UnitClass::Invalidation => "invalidation",
            UnitClass::Abstention => "abstention",
            UnitClass::Provenance => "provenance",
        }
    }

    pub fn parse(s: &str) -> Option<UnitClass> {
        UnitClass::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Validity-state units: the invalidation-coverage metric and the
    /// no-tombstone ablation both key off this.
    pub fn is_validity(self) -> bool {
        matches!(self, UnitClass::Invalidation | UnitClass::Abstention)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Clipped,
}

impl ObjectiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Clipped => "clipped",
        }
    }

    pub fn parse(s: &str) -> Option<ObjectiveKind> {
        (s == "clipped").then_some(ObjectiveKind::Clipped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostRule {
    Word,
    ByteOverhead,
}

/// byte_overhead cost = BYTE_BASE + ceil(bytes / BYTE_DIVISOR).
pub const BYTE_BASE: u64 = 8;
pub const BYTE_DIVISOR: u64 = 24;

impl CostRule {
    pub fn as_str(self) -> &'static str {
        match self {
            CostRule::Word => "word",
            CostRule::ByteOverhead => "byte_overhead",
        }
    }

    pub fn parse(s: &str) -> Option<CostRule> {
        match s {
            "word" => Some(CostRule::Word),
            "byte_overhead" | "byte-overhead" => Some(CostRule::ByteOverhead),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceUnit {
    pub unit_id: String,
    pub description: String,
    pub class: UnitClass,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub candidate_id: String,
    pub group_id: u32,
    pub kind: CandidateKind,
    pub text: String,
    pub explicit_cost: Option<f64>,
    /// Sparse coverage row: evidence unit id -> strength in [0, 1].
    pub coverage: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub group_id: u32,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Package {
    pub package_id: String,
    pub candidates: Vec<Candidate>,
    pub groups: Vec<Group>,
    pub units: Vec<EvidenceUnit>,
    pub objective: ObjectiveKind,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreSource {
    Solver,
    Writer,
    Exported,
    Pruned,
}

impl StoreSource {
    pub fn as_str(self) -> &'static str {
        match self {
            StoreSource::Solver => "solver",
            StoreSource::Writer => "writer",
            StoreSource::Exported => "exported",
            StoreSource::Pruned => "pruned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    pub selected: BTreeSet<String>,
    pub source: StoreSource,
}

impl Store {
    pub fn empty(source: StoreSource) -> Store {
        Store {
            selected: BTreeSet::new(),
            source,
        }
    }

    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I, source: StoreSource) -> Store {
        Store {
            selected: ids.into_iter().collect(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum PackageError {
    #[error("parse error at byte {byte_offset} (line {line}, column {column}): {message}")]
    Json {
        byte_offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown candidate id {0:?}")]
    UnknownCandidate(String),
    #[error("unknown evidence unit id {0:?}")]
    UnknownUnit(String),
    #[error("candidate {candidate_id:?} has no computable cost: {message}")]
    Cost {
        candidate_id: String,
        message: String,
    },
    #[error("invalid package: {0}")]
    Invalid(String),
}

/// One invariant violation found by [`validate_package`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Cost of one candidate under a rule. `explicit_cost` overrides the rule;
/// otherwise word = whitespace token count (minimum 1) and byte_overhead =
/// 8 + ceil(bytes/24). A candidate with neither an explicit cost nor any
/// text has no cost and is rejected.
pub fn candidate_cost(cand: &Candidate, rule: CostRule) -> Result<f64, PackageError> {
    if let Some(c) = cand.explicit_cost {
        if !(c.is_finite() && c > 0.0) {
            return Err(PackageError::Cost {
                candidate_id: cand.candidate_id.clone(),
                message: format!("explicit_cost {c} MUST be positive and finite"),
            });
        }
        return Ok(c);
    }
    let words = cand.text.split_whitespace().count();
    if words == 0 {
        return Err(PackageError::Cost {
            candidate_id: cand.candidate_id.clone(),
            message: "empty text with no explicit_cost".to_string(),
        });
    }
    Ok(match rule {
        CostRule::Word => words.max(1) as f64,
        CostRule::ByteOverhead => {
            let bytes = cand.text.len() as u64;
            (BYTE_BASE + bytes.div_ceil(BYTE_DIVISOR)) as f64
        }
    })
}

impl Candidate {
    /// Validity-bearing candidates: tombstones and compound updates by kind,
    /// plus anything whose coverage touches an invalidation or abstention
    /// unit. Derived, never serialized.
    pub fn validity_flag(&self, pkg: &Package) -> bool {
        if matches!(
            self.kind,
            CandidateKind::Tombstone | CandidateKind::CompoundUpdate
        ) {
            return true;
        }
        self.coverage.iter().any(|(unit_id, &a)| {
            a > 0.0
                && pkg
                    .unit(unit_id)
                    .is_some_and(|u| u.class.is_validity())
        })
    }
}

impl Package {
    pub fn unit(&self, unit_id: &str) -> Option<&EvidenceUnit> {
        self.units
            .binary_search_by(|u| u.unit_id.as_str().cmp(unit_id))
            .ok()
            .map(|i| &self.units[i])
    }

    pub fn candidate(&self, candidate_id: &str) -> Option<&Candidate> {
        self.candidates
            .binary_search_by(|c| c.candidate_id.as_str().cmp(candidate_id))
            .ok()
            .map(|i| &self.candidates[i])
    }

    pub fn total_weight(&self) -> f64 {
        self.units.iter().map(|u| u.weight).sum()
    }

    /// Sorts candidates, units, groups, and group members into canonical
    /// order. Construction-side helper; parsing applies it automatically.
    pub fn normalize(&mut self) {
        self.candidates
            .sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
        self.units.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
        self.groups.sort_by_key(|g| g.group_id);
        for g in &mut self.groups {
            g.members.sort();
        }
    }

    /// Builds the evaluation view under a cost rule. Fails on invalid
    /// packages so every downstream operation starts from a checked base.
    pub fn index(&self, rule: CostRule) -> Result<PackageIndex<'_>, PackageError> {
        let violations = validate_package(self);
        if let Some(v) = violations.first() {
            return Err(PackageError::Invalid(format!(
                "{v} ({} violation(s) total)",
                violations.len()
            )));
        }
        let unit_pos: BTreeMap<String, usize> = self
            .units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.unit_id.clone(), i))
            .collect();
        let cand_pos: BTreeMap<String, usize> = self
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.candidate_id.clone(), i))
            .collect();
        let mut costs = Vec::with_capacity(self.candidates.len());
        let mut cov = Vec::with_capacity(self.candidates.len());
        for c in &self.candidates {
            costs.push(candidate_cost(c, rule)?);
            let mut row: Vec<(usize, f64)> = c
                .coverage
                .iter()
                .map(|(uid, &a)| (unit_pos[uid], a))
                .collect();
            row.sort_by_key(|&(u, _)| u);
            cov.push(row);
        }
        let group_ids: Vec<u32> = self.groups.iter().map(|g| g.group_id).collect();
        let mut group_members = Vec::with_capacity(self.groups.len());
        let mut group_of = vec![usize::MAX; self.candidates.len()];
        for (gi, g) in self.groups.iter().enumerate() {
            let members: Vec<usize> = g.members.iter().map(|id| cand_pos[id]).collect();
            for &m in &members {
                group_of[m] = gi;
            }
            group_members.push(members);
        }
        let validity_units: Vec<usize> = self
            .units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.class.is_validity())
            .map(|(i, _)| i)
            .collect();
        let weights: Vec<f64> = self.units.iter().map(|u| u.weight).collect();
        let total_weight = weights.iter().sum();
        Ok(PackageIndex {
            pkg: self,
            rule,
            costs,
            cov,
            weights,
            group_ids,
            group_members,
            group_of,
            cand_pos,
            unit_pos,
            validity_units,
            total_weight,
        })
    }
}

/// Position-indexed view of a validated package under one cost rule. All
/// solvers and writers work against this; positions follow canonical id
/// order, so anything derived from them is deterministic.
#[derive(Debug)]
pub struct PackageIndex<'a> {
    pub pkg: &'a Package,
    pub rule: CostRule,
    pub costs: Vec<f64>,
    pub cov: Vec<Vec<(usize, f64)>>,
    pub weights: Vec<f64>,
    pub group_ids: Vec<u32>,
    pub group_members: Vec<Vec<usize>>,
    pub group_of: Vec<usize>,
    pub cand_pos: BTreeMap<String, usize>,
    pub unit_pos: BTreeMap<String, usize>,
    pub validity_units: Vec<usize>,
    pub total_weight: f64,
}

impl<'a> PackageIndex<'a> {
    pub fn num_candidates(&self) -> usize {
        self.costs.len()
    }

    pub fn num_units(&self) -> usize {
        self.weights.len()
    }

    pub fn candidate_id(&self, pos: usize) -> &str {
        &self.pkg.candidates[pos].candidate_id
    }

    pub fn kind(&self, pos: usize) -> CandidateKind {
        self.pkg.candidates[pos].kind
    }

    /// Resolves store ids to candidate positions, rejecting unknown ids.
    pub fn positions_of(&self, store: &Store) -> Result<Vec<usize>, PackageError> {
        store
            .selected
            .iter()
            .map(|id| {
                self.cand_pos
                    .get(id)
                    .copied()
                    .ok_or_else(|| PackageError::UnknownCandidate(id.clone()))
            })
            .collect()
    }

    pub fn store_cost(&self, store: &Store) -> Result<f64, PackageError> {
        Ok(self.positions_of(store)?.iter().map(|&p| self.costs[p]).sum())
    }
}

/// Budget + partition feasibility: total cost within `budget` (absolute
/// tolerance [`BUDGET_EPS`]) and at most `k` selected candidates per group.
pub fn is_feasible(
    store: &Store,
    idx: &PackageIndex<'_>,
    budget: f64,
    k: usize,
) -> Result<bool, PackageError> {
    let positions = idx.positions_of(store)?;
    let cost: f64 = positions.iter().map(|&p| idx.costs[p]).sum();
    if cost > budget + BUDGET_EPS {
        return Ok(false);
    }
    let mut per_group: BTreeMap<usize, usize> = BTreeMap::new();
    for &p in &positions {
        let g = idx.group_of[p];
        let n = per_group.entry(g).or_insert(0);
        *n += 1;
        if *n > k {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks every package invariant and reports all violations. An empty
/// report means the package is valid.
pub fn validate_package(pkg: &Package) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: String, message: String| out.push(Violation { path, message });

    for w in pkg.candidates.windows(2) {
        if w[0].candidate_id >= w[1].candidate_id {
            push(
                format!("candidates[{:?}]", w[1].candidate_id),
                "candidate ids MUST be unique and sorted".to_string(),
            );
        }
    }
    for w in pkg.units.windows(2) {
        if w[0].unit_id >= w[1].unit_id {
            push(
                format!("evidence_units[{:?}]", w[1].unit_id),
                "unit ids MUST be unique and sorted".to_string(),
            );
        }
    }
    for w in pkg.groups.windows(2) {
        if w[0].group_id >= w[1].group_id {
            push(
                format!("groups[{}]", w[1].group_id),
                "group ids MUST be unique and sorted".to_string(),
            );
        }
    }

    let unit_ids: BTreeSet<&str> = pkg.units.iter().map(|u| u.unit_id.as_str()).collect();
    let cand_ids: BTreeSet<&str> = pkg.candidates.iter().map(|c| c.candidate_id.as_str()).collect();

    for u in &pkg.units {
        if !(u.weight.is_finite() && u.weight >= 0.0) {
            push(
                format!("weights[{:?}]", u.unit_id),
                format!("weight {} MUST be nonnegative and finite", u.weight),
            );
        }
    }

    // Partition: every candidate in exactly one group, members resolve, and
    // the candidate's own group_id agrees with the group holding it.
    let mut membership: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for g in &pkg.groups {
        if g.members.is_empty() {
            push(
                format!("groups[{}]", g.group_id),
                "group has no members".to_string(),
            );
        }
        for m in &g.members {
            if !cand_ids.contains(m.as_str()) {
                push(
                    format!("groups[{}]", g.group_id),
                    format!("member {m:?} is not a candidate id"),
                );
            } else {
                membership.entry(m.as_str()).or_default().push(g.group_id);
            }
        }
    }
    for c in &pkg.candidates {
        match membership.get(c.candidate_id.as_str()).map(Vec::as_slice) {
            None | Some([]) => push(
                format!("candidates[{:?}]", c.candidate_id),
                "candidate belongs to no group".to_string(),
            ),
            Some([g]) => {
                if *g != c.group_id {
                    push(
                        format!("candidates[{:?}]", c.candidate_id),
                        format!("group_id {} disagrees with containing group {g}", c.group_id),
                    );
                }
            }
            Some(gs) => push(
                format!("candidates[{:?}]", c.candidate_id),
                format!("candidate appears in {} groups; partition requires exactly one", gs.len()),
            ),
        }

        for rule in [CostRule::Word, CostRule::ByteOverhead] {
            match candidate_cost(c, rule) {
                Ok(cost) if cost > 0.0 => {}
                Ok(cost) => push(
                    format!("candidates[{:?}]", c.candidate_id),
                    format!("cost {cost} under {} MUST be positive", rule.as_str()),
                ),
                Err(e) => {
                    push(format!("candidates[{:?}]", c.candidate_id), e.to_string());
                    break; // same failure under the other rule
                }
            }
        }

        for (uid, &a) in &c.coverage {
            if !unit_ids.contains(uid.as_str()) {
                push(
                    format!("coverage[{:?}][{uid:?}]", c.candidate_id),
                    "coverage row references unknown evidence unit".to_string(),
                );
            }
            if !(0.0..=1.0).contains(&a) || !a.is_finite() {
                push(
                    format!("coverage[{:?}][{uid:?}]", c.candidate_id),
                    format!("coverage {a} MUST be in [0, 1]"),
                );
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Canonical serialization
// ---------------------------------------------------------------------------

pub(crate) fn json_str(out: &mut String, s: &str) {
    // serde_json's string encoder is the escaping authority.
    out.push_str(&serde_json::to_string(s).expect("string encoding is infallible"));
}

/// Canonical JSON bytes: keys sorted at every level, arrays in id order,
/// every real number printed with exactly 6 decimals. Identical packages
/// produce identical bytes.
pub fn serialize_package(pkg: &Package) -> String {
    let mut s = String::new();
    s.push_str("{\n  \"candidates\": [");
    for (i, c) in pkg.candidates.iter().enumerate() {
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        s.push_str("    {\"candidate_id\": ");
        json_str(&mut s, &c.candidate_id);
        if let Some(ec) = c.explicit_cost {
            let _ = write!(s, ", \"explicit_cost\": {}", format6(ec));
        }
        let _ = write!(s, ", \"group_id\": {}, \"kind\": \"{}\", \"text\": ", c.group_id, c.kind.as_str());
        json_str(&mut s, &c.text);
        s.push('}');
    }
    s.push_str("\n  ],\n  \"coverage\": {");
    let mut first = true;
    for c in &pkg.candidates {
        if c.coverage.is_empty() {
            continue;
        }
        s.push_str(if first { "\n" } else { ",\n" });
        first = false;
        s.push_str("    ");
        json_str(&mut s, &c.candidate_id);
        s.push_str(": {");
        for (j, (uid, a)) in c.coverage.iter().enumerate() {
            if j > 0 {
                s.push_str(", ");
            }
            json_str(&mut s, uid);
            let _ = write!(s, ": {}", format6(*a));
        }
        s.push('}');
    }
    s.push_str("\n  },\n  \"evidence_units\": [");
    for (i, u) in pkg.units.iter().enumerate() {
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        s.push_str("    {\"description\": ");
        json_str(&mut s, &u.description);
        let _ = write!(s, ", \"unit_class\": \"{}\", \"unit_id\": ", u.class.as_str());
        json_str(&mut s, &u.unit_id);
        s.push('}');
    }
    s.push_str("\n  ],\n  \"groups\": [");
    for (i, g) in pkg.groups.iter().enumerate() {
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        let _ = write!(s, "    {{\"group_id\": {}, \"members\": [", g.group_id);
        for (j, m) in g.members.iter().enumerate() {
            if j > 0 {
                s.push_str(", ");
            }
            json_str(&mut s, m);
        }
        s.push_str("]}");
    }
    s.push_str("\n  ],\n  \"metadata\": {");
    for (i, (k, v)) in pkg.metadata.iter().enumerate() {
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        s.push_str("    ");
        json_str(&mut s, k);
        s.push_str(": ");
        json_str(&mut s, v);
    }
    if !pkg.metadata.is_empty() {
        s.push('\n');
    }
    let _ = write!(s, "  }},\n  \"objective_kind\": \"{}\",\n  \"package_id\": ", pkg.objective.as_str());
    json_str(&mut s, &pkg.package_id);
    s.push_str(",\n  \"weights\": {");
    for (i, u) in pkg.units.iter().enumerate() {
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        s.push_str("    ");
        json_str(&mut s, &u.unit_id);
        let _ = write!(s, ": {}", format6(u.weight));
    }
    s.push_str("\n  }\n}\n");
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCandidate {
    candidate_id: String,
    #[serde(default)]
    explicit_cost: Option<f64>,
    group_id: u32,
    kind: String,
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUnit {
    description: String,
    unit_class: String,
    unit_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    group_id: u32,
    members: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPackage {
    candidates: Vec<RawCandidate>,
    coverage: BTreeMap<String, BTreeMap<String, f64>>,
    evidence_units: Vec<RawUnit>,
    groups: Vec<RawGroup>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    objective_kind: String,
    package_id: String,
    weights: BTreeMap<String, f64>,
}

fn byte_offset_of(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in input.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    input.len()
}

/// Parses and assembles a package from canonical (or hand-written) JSON.
/// Structural problems (malformed JSON, unknown fields, duplicated ids,
/// dangling references) are parse errors naming the offending field; range
/// checks are left to [`validate_package`].
pub fn parse_package(input: &str) -> Result<Package, PackageError> {
    let raw: RawPackage = serde_json::from_str(input).map_err(|e| PackageError::Json {
        byte_offset: byte_offset_of(input, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let objective = ObjectiveKind::parse(&raw.objective_kind).ok_or_else(|| PackageError::Parse {
        path: "objective_kind".to_string(),
        message: format!("unknown objective kind {:?}", raw.objective_kind),
    })?;

    let mut units = Vec::with_capacity(raw.evidence_units.len());
    let mut seen_units = BTreeSet::new();
    for (i, u) in raw.evidence_units.iter().enumerate() {
        if !seen_units.insert(u.unit_id.clone()) {
            return Err(PackageError::Parse {
                path: format!("evidence_units[{i}]"),
                message: format!("duplicated unit id {:?}", u.unit_id),
            });
        }
        let class = UnitClass::parse(&u.unit_class).ok_or_else(|| PackageError::Parse {
            path: format!("evidence_units[{i}].unit_class"),
            message: format!("unknown unit class {:?}", u.unit_class),
        })?;
        let weight = *raw.weights.get(&u.unit_id).ok_or_else(|| PackageError::Parse {
            path: "weights".to_string(),
            message: format!("missing weight for unit {:?}", u.unit_id),
        })?;
        units.push(EvidenceUnit {
            unit_id: u.unit_id.clone(),
            description: u.description.clone(),
            class,
            weight,
        });
    }
    for uid in raw.weights.keys() {
        if !seen_units.contains(uid) {
            return Err(PackageError::Parse {
                path: format!("weights[{uid:?}]"),
                message: "weight for unknown evidence unit".to_string(),
            });
        }
    }

    let mut candidates = Vec::with_capacity(raw.candidates.len());
    let mut seen_cands = BTreeSet::new();
    for (i, c) in raw.candidates.iter().enumerate() {
        if !seen_cands.insert(c.candidate_id.clone()) {
            return Err(PackageError::Parse {
                path: format!("candidates[{i}]"),
                message: format!("duplicated candidate id {:?}", c.candidate_id),
            });
        }
        let kind = CandidateKind::parse(&c.kind).ok_or_else(|| PackageError::Parse {
            path: format!("candidates[{i}].kind"),
            message: format!("unknown candidate kind {:?}", c.kind),
        })?;
        let coverage = raw.coverage.get(&c.candidate_id).cloned().unwrap_or_default();
        for uid in coverage.keys() {
            if !seen_units.contains(uid) {
                return Err(PackageError::Parse {
                    path: format!("coverage[{:?}][{uid:?}]", c.candidate_id),
                    message: "coverage references unknown evidence unit".to_string(),
                });
            }
        }
        candidates.push(Candidate {
            candidate_id: c.candidate_id.clone(),
            group_id: c.group_id,
            kind,
            text: c.text.clone(),
            explicit_cost: c.explicit_cost,
            coverage,
        });
    }
    for cid in raw.coverage.keys() {
        if !seen_cands.contains(cid) {
            return Err(PackageError::Parse {
                path: format!("coverage[{cid:?}]"),
                message: "coverage row for unknown candidate".to_string(),
            });
        }
    }

    let mut groups = Vec::with_capacity(raw.groups.len());
    let mut seen_groups = BTreeSet::new();
    for g in &raw.groups {
        if !seen_groups.insert(g.group_id) {
            return Err(PackageError::Parse {
                path: format!("groups[{}]", g.group_id),
                message: "duplicated group id".to_string(),
            });
        }
        for m in &g.members {
            if !seen_cands.contains(m) {
                return Err(PackageError::Parse {
                    path: format!("groups[{}]", g.group_id),
                    message: format!("member {m:?} is not a candidate id"),
                });
            }
        }
        groups.push(Group {
            group_id: g.group_id,
            members: g.members.clone(),
        });
    }

    let mut pkg = Package {
        package_id: raw.package_id,
        candidates,
        groups,
        units,
        objective,
        metadata: raw.metadata,
    };
    pkg.normalize();
    Ok(pkg)
}
