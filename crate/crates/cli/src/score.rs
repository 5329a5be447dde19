//! `memsel score-export`: score exported memory sets against a base
//! package. Each export is pruned to the budget under every requested
//! policy, then scored under both denominators: the base-package optimum
//! (can exceed 1 when exports add unique coverage) and the union-package
//! optimum (never exceeds 1).

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use memsel::format6;
use memsel::package::{parse_package, CostRule, Package};
use memsel::scoring::{
    build_union_package, package_ratio_against, parse_export_file, prune_exported,
    rank_export_systems, spearman, union_ratio, ExportedMemory, PrunePolicy, RatioReport,
};
use memsel::solver::solve_exact_bnb;

use crate::{
    budget_key, parse_budget, parse_cost_rule, parse_k, parse_policy, read_file, write_file,
    Failure,
};

#[derive(Args)]
pub struct ScoreExportArgs {
    /// Base package file.
    #[arg(long)]
    package: PathBuf,
    /// Export file (one system per file); repeat to compare systems.
    #[arg(long = "export", required = true)]
    exports: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_budget)]
    budgets: Vec<f64>,
    /// Prune policies (default: recency,salience,upper).
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    policies: Option<Vec<PrunePolicy>>,
    /// Cost rules to score under (default: word).
    #[arg(long = "cost-rules", value_delimiter = ',', value_parser = parse_cost_rule)]
    cost_rules: Option<Vec<CostRule>>,
    /// Selections per group.
    #[arg(long, default_value = "1", value_parser = parse_k)]
    k: usize,
    /// Output directory for scores.csv and score_summary.json.
    #[arg(long)]
    out: PathBuf,
}

struct ScoreRow {
    system: String,
    policy: PrunePolicy,
    report: RatioReport,
}

#[derive(Serialize)]
struct RankEntry {
    system: String,
    union_ratio: f64,
}

#[derive(Serialize)]
struct RankComparison {
    budget: f64,
    policy: String,
    /// cost rule -> systems best first.
    rankings: BTreeMap<String, Vec<RankEntry>>,
    /// Rank correlation between the first two cost rules, when two or more
    /// were requested.
    rank_agreement: Option<f64>,
}

#[derive(Serialize)]
struct ScoreSummary {
    package_id: String,
    k: usize,
    cost_rules: Vec<String>,
    policies: Vec<String>,
    budgets: Vec<f64>,
    systems: Vec<String>,
    comparisons: Vec<RankComparison>,
}

fn load_systems(paths: &[PathBuf]) -> Result<Vec<(String, Vec<ExportedMemory>)>, Failure> {
    let mut systems: Vec<(String, Vec<ExportedMemory>)> = Vec::with_capacity(paths.len());
    for path in paths {
        let text = read_file(path)?;
        let (system, memories) = parse_export_file(&text)
            .map_err(|err| Failure::Data(format!("{}: {err}", path.display())))?;
        if systems.iter().any(|(name, _)| *name == system) {
            return Err(Failure::Data(format!(
                "{}: system {system:?} appears in more than one export file",
                path.display()
            )));
        }
        systems.push((system, memories));
    }
    Ok(systems)
}

pub fn run(args: ScoreExportArgs) -> Result<(), Failure> {
    let base: Package = parse_package(&read_file(&args.package)?)
        .map_err(|err| Failure::Data(format!("{}: {err}", args.package.display())))?;
    let systems = load_systems(&args.exports)?;
    let policies = args
        .policies
        .clone()
        .unwrap_or_else(|| PrunePolicy::ALL.to_vec());
    let rules = args
        .cost_rules
        .clone()
        .unwrap_or_else(|| vec![CostRule::Word]);

    let mut rows: Vec<ScoreRow> = Vec::new();
    for &rule in &rules {
        let base_idx = base.index(rule)?;
        for &budget in &args.budgets {
            let opt_base = solve_exact_bnb(&base_idx, budget, args.k);
            for (system, memories) in &systems {
                let union = build_union_package(&base, memories, rule)?;
                let union_idx = union.index(rule)?;
                for &policy in &policies {
                    let pruned = prune_exported(memories, &union, rule, budget, policy)?;
                    let mut union_report = union_ratio(
                        &pruned.store,
                        &union_idx,
                        &base_idx,
                        budget,
                        args.k,
                        &pruned.method,
                    )?;
                    let mut package_report = package_ratio_against(
                        &pruned.store,
                        &union_idx,
                        &opt_base,
                        &pruned.method,
                    )?;
                    // The upper prune is a bound, not an achievable policy.
                    let analysis_only = policy == PrunePolicy::Upper;
                    union_report.analysis_only = analysis_only;
                    package_report.analysis_only = analysis_only;
                    rows.push(ScoreRow {
                        system: system.clone(),
                        policy,
                        report: package_report,
                    });
                    rows.push(ScoreRow {
                        system: system.clone(),
                        policy,
                        report: union_report,
                    });
                }
            }
        }
    }

    rows.sort_by(|a, b| {
        a.report
            .cost_rule
            .as_str()
            .cmp(b.report.cost_rule.as_str())
            .then(budget_key(a.report.budget).cmp(&budget_key(b.report.budget)))
            .then(a.system.cmp(&b.system))
            .then(a.policy.as_str().cmp(b.policy.as_str()))
            .then(
                a.report
                    .denominator_kind
                    .as_str()
                    .cmp(b.report.denominator_kind.as_str()),
            )
    });

    let csv_path = args.out.join("scores.csv");
    let mut text = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut text);
        writer
            .write_record([
                "system",
                "package_id",
                "budget",
                "cost_rule",
                "k",
                "policy",
                "method",
                "denominator_kind",
                "value",
                "denominator",
                "ratio",
                "package_denominator_ratio",
                "invalidation_coverage",
                "analysis_only",
                "denominator_solver",
                "denominator_certified",
            ])
            .and_then(|()| {
                for row in &rows {
                    let r = &row.report;
                    writer.write_record([
                        row.system.clone(),
                        base.package_id.clone(),
                        format6(r.budget),
                        r.cost_rule.as_str().to_string(),
                        r.k.to_string(),
                        row.policy.as_str().to_string(),
                        r.method.clone(),
                        r.denominator_kind.as_str().to_string(),
                        format6(r.value),
                        format6(r.denominator),
                        r.ratio.map(format6).unwrap_or_default(),
                        r.package_denominator_ratio.map(format6).unwrap_or_default(),
                        format6(r.invalidation_coverage),
                        r.analysis_only.to_string(),
                        r.denominator_solver.clone(),
                        r.denominator_certified.to_string(),
                    ])?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|err| Failure::Data(format!("cannot build scores CSV: {err}")))?;
    }
    let text = String::from_utf8(text).expect("CSV output is UTF-8");
    write_file(&csv_path, &text)?;

    // Ranking comparison across cost rules, one block per (budget, policy).
    let mut comparisons = Vec::new();
    for &budget in &args.budgets {
        for &policy in &policies {
            let mut rankings: BTreeMap<String, Vec<RankEntry>> = BTreeMap::new();
            let mut by_rule: Vec<Vec<f64>> = Vec::new();
            let mut names: Vec<String> = systems.iter().map(|(n, _)| n.clone()).collect();
            names.sort();
            for &rule in &rules {
                let ranked = rank_export_systems(&base, &systems, rule, budget, policy)?;
                by_rule.push(
                    names
                        .iter()
                        .map(|n| {
                            ranked
                                .iter()
                                .find(|(name, _)| name == n)
                                .map(|(_, v)| *v)
                                .unwrap_or(0.0)
                        })
                        .collect(),
                );
                rankings.insert(
                    rule.as_str().to_string(),
                    ranked
                        .into_iter()
                        .map(|(system, union_ratio)| RankEntry {
                            system,
                            union_ratio: memsel::quantize6(union_ratio),
                        })
                        .collect(),
                );
            }
            let rank_agreement = (by_rule.len() >= 2 && names.len() >= 2)
                .then(|| spearman(&by_rule[0], &by_rule[1]));
            comparisons.push(RankComparison {
                budget,
                policy: policy.as_str().to_string(),
                rankings,
                rank_agreement,
            });
        }
    }

    let summary = ScoreSummary {
        package_id: base.package_id.clone(),
        k: args.k,
        cost_rules: rules.iter().map(|r| r.as_str().to_string()).collect(),
        policies: policies.iter().map(|p| p.as_str().to_string()).collect(),
        budgets: args.budgets.clone(),
        systems: systems.iter().map(|(n, _)| n.clone()).collect(),
        comparisons,
    };
    let mut summary_text =
        serde_json::to_string_pretty(&summary).expect("summary always serializes");
    summary_text.push('\n');
    write_file(&args.out.join("score_summary.json"), &summary_text)?;

    println!("{} rows -> {}", rows.len(), csv_path.display());
    Ok(())
}
