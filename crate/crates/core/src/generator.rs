//! Synthetic instance generation.
//!
//! Instances come from a hidden event timeline: entities carry attribute
//! slots, each experience either asserts a slot's first value or supersedes
//! an earlier one. Superseded values spawn invalidation units (weighted
//! high, arriving late by construction, since an update needs something to
//! update), which is exactly the material that myopic writers miss.
//!
//! Every drawn weight and coverage strength is quantized to 6 decimals so
//! serialized packages round-trip bit-for-bit and objective values land on
//! a fixed lattice.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::package::{
    Candidate, CandidateKind, EvidenceUnit, Group, ObjectiveKind, Package, UnitClass,
};
use crate::rng::{mix_seed, SplitMix64};
use crate::quantize6;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    Base,
    UpdateChain,
    TemporalInterval,
}

impl Distribution {
    pub const ALL: [Distribution; 3] = [
        Distribution::Base,
        Distribution::UpdateChain,
        Distribution::TemporalInterval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Distribution::Base => "base",
            Distribution::UpdateChain => "update_chain",
            Distribution::TemporalInterval => "temporal_interval",
        }
    }

    pub fn parse(s: &str) -> Option<Distribution> {
        Distribution::ALL.into_iter().find(|d| d.as_str() == s)
    }

    pub fn params(self) -> GeneratorParams {
        let base = GeneratorParams::default();
        match self {
            Distribution::Base => base,
            // few slots touched often: attribute values get superseded in
            // chains, so invalidation units pile up
            Distribution::UpdateChain => GeneratorParams {
                entities: (2, 2),
                attributes_per_entity: (1, 2),
                update_probability: 0.78,
                ..base
            },
            Distribution::TemporalInterval => GeneratorParams {
                interval_probability: 0.55,
                temporal_unit_probability: 0.7,
                ..base
            },
        }
    }
}

/// Knobs for the timeline sampler. Integer pairs are inclusive ranges;
/// float pairs are uniform ranges. Word counts ARE the word-rule costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub experiences: (u32, u32),
    pub entities: (u32, u32),
    pub attributes_per_entity: (u32, u32),
    pub update_probability: f64,
    pub temporal_unit_probability: f64,
    pub raw_span_probability: f64,
    pub summary_probability: f64,
    pub compound_probability: f64,
    /// Probability that a slot is interval-valued (temporal_interval sets
    /// this above zero). Touching an interval slot always emits a boundary
    /// temporal unit plus a temporal_event candidate.
    pub interval_probability: f64,
    pub fact_weight: (f64, f64),
    pub temporal_weight: (f64, f64),
    /// Deliberately above the fact range: losing track of what got
    /// superseded costs more than missing a detail.
    pub invalidation_weight: (f64, f64),
    pub atomic_cost: (u32, u32),
    pub raw_cost: (u32, u32),
    pub summary_cost: (u32, u32),
    pub tombstone_cost: (u32, u32),
    pub compound_cost: (u32, u32),
    pub temporal_event_cost: (u32, u32),
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            experiences: (8, 12),
            entities: (2, 3),
            attributes_per_entity: (1, 3),
            update_probability: 0.32,
            temporal_unit_probability: 0.5,
            raw_span_probability: 0.95,
            summary_probability: 0.6,
            compound_probability: 0.45,
            interval_probability: 0.0,
            fact_weight: (0.2, 1.0),
            temporal_weight: (0.2, 0.6),
            invalidation_weight: (0.8, 1.6),
            atomic_cost: (1, 3),
            raw_cost: (6, 10),
            summary_cost: (3, 6),
            tombstone_cost: (1, 2),
            compound_cost: (2, 4),
            temporal_event_cost: (2, 3),
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let probs = [
            ("update_probability", self.update_probability),
            ("temporal_unit_probability", self.temporal_unit_probability),
            ("raw_span_probability", self.raw_span_probability),
            ("summary_probability", self.summary_probability),
            ("compound_probability", self.compound_probability),
            ("interval_probability", self.interval_probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(GeneratorError::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        let int_ranges = [
            ("experiences", self.experiences),
            ("entities", self.entities),
            ("attributes_per_entity", self.attributes_per_entity),
            ("atomic_cost", self.atomic_cost),
            ("raw_cost", self.raw_cost),
            ("summary_cost", self.summary_cost),
            ("tombstone_cost", self.tombstone_cost),
            ("compound_cost", self.compound_cost),
            ("temporal_event_cost", self.temporal_event_cost),
        ];
        for (name, (lo, hi)) in int_ranges {
            if lo == 0 || lo > hi {
                return Err(GeneratorError::InvalidParameter(format!(
                    "{name} range must satisfy 1 <= lo <= hi, got ({lo}, {hi})"
                )));
            }
        }
        let f_ranges = [
            ("fact_weight", self.fact_weight),
            ("temporal_weight", self.temporal_weight),
            ("invalidation_weight", self.invalidation_weight),
        ];
        for (name, (lo, hi)) in f_ranges {
            if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || lo > hi {
                return Err(GeneratorError::InvalidParameter(format!(
                    "{name} range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

const VOCAB: [&str; 24] = [
    "the", "memory", "agent", "noted", "user", "prefers", "salad", "meeting", "moved", "project",
    "status", "done", "travel", "plan", "window", "seat", "budget", "review", "option", "chosen",
    "flag", "stale", "record", "update",
];

/// `n` words from the cycling vocabulary; the word count is the whole point
/// (it is the word-rule cost), the words themselves are filler.
fn word_text(n: u32, salt: usize) -> String {
    (0..n as usize)
        .map(|i| VOCAB[(salt + i) % VOCAB.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

struct Slot {
    entity: u32,
    interval: bool,
    last_fact: Option<usize>,
    last_boundary: Option<usize>,
}

/// Samples one package. The tag lands in the package id
/// (`pkg_{tag}_{seed}`) and the `distribution` metadata key.
pub fn generate_with(
    params: &GeneratorParams,
    seed: u64,
    tag: &str,
) -> Result<Package, GeneratorError> {
    params.validate()?;
    let mut rng = SplitMix64::new(seed);
    let t = rng.range_u32(params.experiences.0, params.experiences.1);
    let n_entities = rng.range_u32(params.entities.0, params.entities.1);

    let mut slots: Vec<Slot> = Vec::new();
    for entity in 0..n_entities {
        let n_attr = rng.range_u32(params.attributes_per_entity.0, params.attributes_per_entity.1);
        for _ in 0..n_attr {
            slots.push(Slot {
                entity,
                interval: params.interval_probability > 0.0 && rng.chance(params.interval_probability),
                last_fact: None,
                last_boundary: None,
            });
        }
    }

    let mut units: Vec<EvidenceUnit> = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut entity_facts: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut salt = (seed % 17) as usize;

    let push_unit = |units: &mut Vec<EvidenceUnit>, id: String, class: UnitClass, w: f64| {
        units.push(EvidenceUnit {
            unit_id: id,
            description: String::new(),
            class,
            weight: w,
        });
        units.len() - 1
    };

    for e in 0..t {
        let si = rng.below(slots.len() as u64) as usize;
        let is_update = slots[si].last_fact.is_some() && rng.chance(params.update_probability);
        let is_boundary = slots[si].interval;
        let entity = slots[si].entity;

        let fact_u = push_unit(
            &mut units,
            format!("e{e:02}_fact"),
            UnitClass::Fact,
            quantize6(rng.uniform(params.fact_weight.0, params.fact_weight.1)),
        );
        let temporal_u = if is_boundary || rng.chance(params.temporal_unit_probability) {
            Some(push_unit(
                &mut units,
                format!("e{e:02}_time"),
                UnitClass::Temporal,
                quantize6(rng.uniform(params.temporal_weight.0, params.temporal_weight.1)),
            ))
        } else {
            None
        };
        let inval_u = if is_update {
            Some(push_unit(
                &mut units,
                format!("e{e:02}_inval"),
                UnitClass::Invalidation,
                quantize6(rng.uniform(params.invalidation_weight.0, params.invalidation_weight.1)),
            ))
        } else {
            None
        };
        let prev_fact = slots[si].last_fact;
        let prev_boundary = slots[si].last_boundary;

        let mut members: Vec<String> = Vec::new();
        let add = |candidates: &mut Vec<Candidate>,
                       members: &mut Vec<String>,
                       id: String,
                       kind: CandidateKind,
                       words: u32,
                       salt: usize,
                       cov: Vec<(usize, f64)>| {
            candidates.push(Candidate {
                candidate_id: id.clone(),
                group_id: e,
                kind,
                text: word_text(words, salt),
                explicit_cost: None,
                coverage: cov
                    .into_iter()
                    .map(|(u, a)| (units[u].unit_id.clone(), a))
                    .collect(),
            });
            members.push(id);
        };

        // every experience offers at least its atomic fact
        let w = rng.range_u32(params.atomic_cost.0, params.atomic_cost.1);
        add(
            &mut candidates,
            &mut members,
            format!("g{e:02}_fact"),
            CandidateKind::AtomicFact,
            w,
            salt,
            vec![(fact_u, 1.0)],
        );
        salt += w as usize;

        if rng.chance(params.raw_span_probability) {
            let mut cov = vec![(fact_u, quantize6(rng.uniform(0.6, 1.0)))];
            if let Some(u) = temporal_u {
                cov.push((u, quantize6(rng.uniform(0.6, 1.0))));
            }
            if let Some(u) = inval_u {
                cov.push((u, quantize6(rng.uniform(0.6, 1.0))));
            }
            if is_update {
                if let Some(u) = prev_fact {
                    cov.push((u, quantize6(rng.uniform(0.3, 0.7))));
                }
            }
            let w = rng.range_u32(params.raw_cost.0, params.raw_cost.1);
            add(
                &mut candidates,
                &mut members,
                format!("g{e:02}_raw"),
                CandidateKind::RawSpan,
                w,
                salt,
                cov,
            );
            salt += w as usize;
        }

        if rng.chance(params.summary_probability) {
            let mut cov = vec![(fact_u, quantize6(rng.uniform(0.4, 0.8)))];
            let earlier = entity_facts.get(&entity).map(Vec::as_slice).unwrap_or(&[]);
            for &u in earlier.iter().rev().take(2) {
                cov.push((u, quantize6(rng.uniform(0.4, 0.8))));
            }
            let w = rng.range_u32(params.summary_cost.0, params.summary_cost.1);
            add(
                &mut candidates,
                &mut members,
                format!("g{e:02}_sum"),
                CandidateKind::EntitySummary,
                w,
                salt,
                cov,
            );
            salt += w as usize;
        }

        if let Some(u) = inval_u {
            let w = rng.range_u32(params.tombstone_cost.0, params.tombstone_cost.1);
            add(
                &mut candidates,
                &mut members,
                format!("g{e:02}_tomb"),
                CandidateKind::Tombstone,
                w,
                salt,
                vec![(u, 1.0)],
            );
            salt += w as usize;
            if rng.chance(params.compound_probability) {
                let w = rng.range_u32(params.compound_cost.0, params.compound_cost.1);
                add(
                    &mut candidates,
                    &mut members,
                    format!("g{e:02}_comp"),
                    CandidateKind::CompoundUpdate,
                    w,
                    salt,
                    vec![(fact_u, quantize6(rng.uniform(0.9, 1.0))), (u, 1.0)],
                );
                salt += w as usize;
            }
        }

        if is_boundary {
            let u = temporal_u.expect("interval slots always emit a boundary unit");
            let mut cov = vec![(u, 1.0)];
            if let Some(p) = prev_boundary {
                cov.push((p, quantize6(rng.uniform(0.5, 0.9))));
            }
            let w = rng.range_u32(params.temporal_event_cost.0, params.temporal_event_cost.1);
            add(
                &mut candidates,
                &mut members,
                format!("g{e:02}_tev"),
                CandidateKind::TemporalEvent,
                w,
                salt,
                cov,
            );
            salt += w as usize;
        }

        groups.push(Group {
            group_id: e,
            members,
        });
        entity_facts.entry(entity).or_default().push(fact_u);
        slots[si].last_fact = Some(fact_u);
        if is_boundary {
            slots[si].last_boundary = temporal_u;
        }
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("distribution".to_string(), tag.to_string());
    metadata.insert("seed".to_string(), seed.to_string());
    let mut pkg = Package {
        package_id: format!("pkg_{tag}_{seed}"),
        candidates,
        groups,
        units,
        objective: ObjectiveKind::Clipped,
        metadata,
    };
    pkg.normalize();
    Ok(pkg)
}

/// Samples one package from explicit parameters.
pub fn generate_small(params: &GeneratorParams, seed: u64) -> Result<Package, GeneratorError> {
    generate_with(params, seed, "custom")
}

/// Samples one package from a named stress distribution.
pub fn generate_stress(distribution: Distribution, seed: u64) -> Package {
    generate_with(&distribution.params(), seed, distribution.as_str())
        .expect("built-in parameter sets are valid")
}

/// Worst-case-style instance for density-greedy policies. One group holds a
/// tiny candidate of density 2 next to the real optimum of density 1; a
/// density rule keeps the tiny one and scores min(eta, 1/2) against an
/// optimum of exactly 1. All numbers are chosen to be exact in binary
/// floating point, so comparisons against this instance need no tolerance.
pub fn adversarial_density_instance(eta: f64) -> Result<(Package, f64), GeneratorError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(GeneratorError::InvalidParameter(format!(
            "eta must lie in (0, 1], got {eta}"
        )));
    }
    let strength = eta.min(0.5); // == 2 * delta, exact: halving is exact
    let delta = strength / 2.0;
    let mut metadata = BTreeMap::new();
    metadata.insert("distribution".to_string(), "adversarial".to_string());
    metadata.insert("eta".to_string(), crate::format6(eta));
    let mut pkg = Package {
        package_id: format!("pkg_adversarial_{}", crate::format6(eta)),
        candidates: vec![
            Candidate {
                candidate_id: "bait".to_string(),
                group_id: 0,
                kind: CandidateKind::AtomicFact,
                text: "tiny dense note".to_string(),
                explicit_cost: Some(delta),
                coverage: [("r".to_string(), strength)].into_iter().collect(),
            },
            Candidate {
                candidate_id: "payload".to_string(),
                group_id: 0,
                kind: CandidateKind::EntitySummary,
                text: "the actual content".to_string(),
                explicit_cost: Some(1.0),
                coverage: [("r".to_string(), 1.0)].into_iter().collect(),
            },
        ],
        groups: vec![Group {
            group_id: 0,
            members: vec!["bait".to_string(), "payload".to_string()],
        }],
        units: vec![EvidenceUnit {
            unit_id: "r".to_string(),
            description: "the single question that matters".to_string(),
            class: UnitClass::Fact,
            weight: 1.0,
        }],
        objective: ObjectiveKind::Clipped,
        metadata,
    };
    pkg.normalize();
    Ok((pkg, 2.0))
}

/// Budgets drawn for certification batches. Sized so exhaustive audits stay
/// well under the enumeration cap.
const AUDIT_BUDGETS: [f64; 6] = [1.0, 2.0, 4.0, 6.0, 8.0, 16.0];

fn audit_params() -> GeneratorParams {
    GeneratorParams {
        experiences: (3, 7),
        entities: (2, 3),
        attributes_per_entity: (1, 2),
        update_probability: 0.4,
        temporal_unit_probability: 0.4,
        raw_span_probability: 0.8,
        summary_probability: 0.5,
        compound_probability: 0.3,
        ..GeneratorParams::default()
    }
}

/// `n` small (package, budget) pairs for solver certification.
pub fn generate_audit_suite(n: u32, seed: u64) -> Vec<(Package, f64)> {
    let params = audit_params();
    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let sub = mix_seed(seed, u64::from(i));
        let pkg = generate_with(&params, sub, "audit").expect("audit parameters are valid");
        let mut rng = SplitMix64::new(mix_seed(sub, 0xB0D6E7));
        let budget = AUDIT_BUDGETS[rng.below(AUDIT_BUDGETS.len() as u64) as usize];
        out.push((pkg, budget));
    }
    out
}

/// Deterministic pretend export systems over a package's units, for scoring
/// demos and audits: each system exports a handful of memories covering
/// sampled units, some with declared costs and some paying by text.
pub fn synthetic_export_suite(
    base: &Package,
    systems: u32,
    memories_per_system: u32,
    seed: u64,
) -> Vec<(String, Vec<crate::scoring::ExportedMemory>)> {
    let mut out = Vec::new();
    for s in 0..systems {
        let name = format!("system_{s:02}");
        let mut rng = SplitMix64::new(mix_seed(seed, u64::from(s)));
        let mut memories = Vec::new();
        for i in 0..memories_per_system {
            let mut coverage = BTreeMap::new();
            if !base.units.is_empty() {
                for _ in 0..(1 + rng.below(3)) {
                    let u = &base.units[rng.below(base.units.len() as u64) as usize];
                    coverage.insert(u.unit_id.clone(), quantize6(rng.uniform(0.3, 0.9)));
                }
            }
            let words = rng.range_u32(1, 4);
            let declared = rng.chance(0.5);
            memories.push(crate::scoring::ExportedMemory {
                memory_id: format!("{name}_m{i:02}"),
                text: word_text(words, (seed as usize).wrapping_add(i as usize)),
                timestamp: i64::from(i),
                salience: Some(quantize6(rng.uniform(0.0, 1.0))),
                cost_word: declared.then(|| f64::from(rng.range_u32(1, 4))),
                cost_byte_overhead: declared.then(|| f64::from(rng.range_u32(9, 12))),
                coverage,
                source_system: name.clone(),
            });
        }
        out.push((name, memories));
    }
    out
}

/// Three-tier demo: a base package with one heavy unit nothing in it
/// covers, and three systems whose single export covers that unit at
/// strengths 0.9 / 0.6 / 0.3 with identical costs. Their pruned union
/// ratios are strictly ordered by tier under any cost rule, which makes the
/// demo's system ranking accounting-invariant by construction.
pub fn demo_export_suite(seed: u64) -> (Package, Vec<(String, Vec<crate::scoring::ExportedMemory>)>) {
    let mut base = generate_stress(Distribution::Base, seed);
    base.units.push(EvidenceUnit {
        unit_id: "zz_demo_external".to_string(),
        description: "only exported memories can answer this".to_string(),
        class: UnitClass::Fact,
        weight: 1.0,
    });
    base.package_id = format!("{}_demo", base.package_id);
    base.normalize();
    let systems = [("tier_a", 0.9), ("tier_b", 0.6), ("tier_c", 0.3)]
        .into_iter()
        .map(|(name, strength)| {
            let memory = crate::scoring::ExportedMemory {
                memory_id: format!("{name}_memo"),
                text: "exported note".to_string(),
                timestamp: 0,
                salience: Some(strength),
                cost_word: Some(2.0),
                cost_byte_overhead: Some(10.0),
                coverage: [("zz_demo_external".to_string(), strength)]
                    .into_iter()
                    .collect(),
                source_system: name.to_string(),
            };
            (name.to_string(), vec![memory])
        })
        .collect();
    (base, systems)
}

/// Default total-cost scale that budget fractions refer to.
pub const BUDGET_SCALE: f64 = 80.0;

/// Maps a budget fraction to an absolute word budget: the nearest power of
/// two to `fraction * BUDGET_SCALE`, floored at 1.
pub fn absolute_budget(fraction: f64) -> f64 {
    let target = fraction * BUDGET_SCALE;
    if target <= 1.0 {
        return 1.0;
    }
    let lo = 2f64.powi(target.log2().floor() as i32);
    let hi = lo * 2.0;
    if target - lo <= hi - target {
        lo
    } else {
        hi
    }
}
