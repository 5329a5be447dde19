//! `memsel sweep`: evaluate methods against certified exact optima over a
//! budget grid. Cells are content-addressed ((package bytes, budget, method,
//! params) -> sha256), so an interrupted run resumes from its cache and the
//! final CSV is identical either way. Workers run in parallel; a single
//! collector sorts and writes every output file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use memsel::objective::{coverage_value, invalidation_coverage};
use memsel::package::{parse_package, CostRule, Store};
use memsel::rng::mix_seed;
use memsel::scoring::{bootstrap_ci, DEFAULT_CONFIDENCE, DEFAULT_RESAMPLES};
use memsel::solver::solve_exact_bnb;
use memsel::writers::{
    density_only_write, estimated_gvt_write, fact_only_opt, gvt_best_over_grid, no_tombstone_opt,
    recency_raw_write, summary_only_opt, ThresholdGrid, TraceEntry,
};
use memsel::{format6, quantize6};

use crate::generate::Manifest;
use crate::{
    budget_key, manifest_relative, parse_budget, parse_cost_rule, parse_k, parse_method,
    read_bytes, read_file, with_pool, write_file, Failure, METHOD_REGISTRY,
};

/// Distinguishes the noise stream of `estimated_gvt` runs from every other
/// use of the entry seed.
const ESTIMATE_SALT: u64 = 0x0E57_1A7E;

#[derive(Args)]
pub struct SweepArgs {
    /// Suite manifest written by `memsel generate`.
    #[arg(long)]
    manifest: PathBuf,
    /// Override every entry's budget list.
    #[arg(long, value_delimiter = ',', value_parser = parse_budget)]
    budgets: Option<Vec<f64>>,
    /// Methods to evaluate (default: opt,gvt,estimated_gvt,density_only,recency_raw).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<String>>,
    #[arg(long = "cost-rule", default_value = "word", value_parser = parse_cost_rule)]
    cost_rule: CostRule,
    /// Selections per group.
    #[arg(long, default_value = "1", value_parser = parse_k)]
    k: usize,
    /// Output directory; cells cache under <out>/cells.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 means one per core.
    #[arg(long, default_value_t = 0)]
    jobs: u32,
    /// Bootstrap resamples behind each summary interval; 0 skips intervals.
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    resamples: u32,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Threshold-grid resolution for the threshold writers.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Estimate noise (log-normal sigma) for estimated_gvt.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Also write per-cell writer traces to <out>/traces.jsonl.
    #[arg(long)]
    traces: bool,
}

/// Everything a sweep depends on, resolved from flags.
pub struct SweepConfig {
    pub manifest: PathBuf,
    pub budgets: Option<Vec<f64>>,
    pub methods: Vec<String>,
    pub cost_rule: CostRule,
    pub k: usize,
    pub out: PathBuf,
    pub jobs: u32,
    pub resamples: u32,
    pub confidence: f64,
    pub bootstrap_seed: u64,
    pub epsilon: f64,
    pub sigma: f64,
    pub traces: bool,
}

impl SweepConfig {
    fn from_args(args: SweepArgs) -> Result<SweepConfig, Failure> {
        if !(args.epsilon > 0.0 && args.epsilon < 1.0) {
            return Err(Failure::Usage(format!(
                "epsilon must lie in (0, 1), got {}",
                args.epsilon
            )));
        }
        if !args.sigma.is_finite() || args.sigma < 0.0 {
            return Err(Failure::Usage(format!(
                "sigma must be finite and nonnegative, got {}",
                args.sigma
            )));
        }
        Ok(SweepConfig {
            manifest: args.manifest,
            budgets: args.budgets,
            methods: args.methods.unwrap_or_else(|| {
                ["opt", "gvt", "estimated_gvt", "density_only", "recency_raw"]
                    .map(String::from)
                    .to_vec()
            }),
            cost_rule: args.cost_rule,
            k: args.k,
            out: args.out,
            jobs: args.jobs,
            resamples: args.resamples,
            confidence: DEFAULT_CONFIDENCE,
            bootstrap_seed: args.seed,
            epsilon: args.epsilon,
            sigma: args.sigma,
            traces: args.traces,
        })
    }
}

/// One evaluated (seed, budget, method) cell; exactly what lands in the
/// cache file, so a cache hit reproduces the row without recomputation.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellRow {
    seed: u64,
    distribution: String,
    package_id: String,
    budget: f64,
    method: String,
    cost_rule: String,
    k: usize,
    value: f64,
    opt_value: f64,
    ratio: Option<f64>,
    invalidation_coverage: f64,
    denominator_solver: String,
    denominator_certified: bool,
    lambda: Option<f64>,
    store: Vec<String>,
    trace: Vec<TraceEntry>,
}

struct Cell {
    package_path: PathBuf,
    seed: u64,
    distribution: String,
    budget: f64,
    method: String,
}

fn cell_hash(pkg_bytes: &[u8], cell: &Cell, cfg: &SweepConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(pkg_bytes);
    hasher.update(b"\n");
    hasher.update(
        format!(
            "seed={}|budget={}|method={}|rule={}|k={}|epsilon={}|sigma={}",
            cell.seed,
            format6(cell.budget),
            cell.method,
            cfg.cost_rule.as_str(),
            cfg.k,
            format6(cfg.epsilon),
            format6(cfg.sigma),
        )
        .as_bytes(),
    );
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn compute_cell(pkg_bytes: &[u8], cell: &Cell, cfg: &SweepConfig) -> Result<CellRow, Failure> {
    let text = std::str::from_utf8(pkg_bytes).map_err(|_| {
        Failure::Data(format!("{}: not valid UTF-8", cell.package_path.display()))
    })?;
    let pkg = parse_package(text)
        .map_err(|err| Failure::Data(format!("{}: {err}", cell.package_path.display())))?;
    let idx = pkg.index(cfg.cost_rule)?;
    let opt = solve_exact_bnb(&idx, cell.budget, cfg.k);
    if !opt.exact {
        // Ratios are only reported against certified optima.
        return Err(Failure::Certification(format!(
            "{} at budget {}: denominator solver is not exact",
            pkg.package_id,
            format6(cell.budget)
        )));
    }

    let (store, value, lambda, trace): (Store, f64, Option<f64>, Vec<TraceEntry>) =
        match cell.method.as_str() {
            "opt" => (opt.opt_store.clone(), opt.opt_value, None, Vec::new()),
            "gvt" => {
                let grid = ThresholdGrid::default_for(&idx, cfg.epsilon)?;
                let run = gvt_best_over_grid(&idx, cell.budget, &grid);
                (run.store, run.value, run.lambda, run.trace)
            }
            "estimated_gvt" => {
                let grid = ThresholdGrid::default_for(&idx, cfg.epsilon)?;
                let run = estimated_gvt_write(
                    &idx,
                    cell.budget,
                    &grid,
                    cfg.sigma,
                    mix_seed(cell.seed, ESTIMATE_SALT),
                )?;
                (run.store, run.value, run.lambda, run.trace)
            }
            "density_only" => {
                let run = density_only_write(&idx, cell.budget);
                (run.store, run.value, run.lambda, run.trace)
            }
            "recency_raw" => {
                let run = recency_raw_write(&idx, cell.budget);
                (run.store, run.value, run.lambda, run.trace)
            }
            "no_tombstone_opt" => {
                let solved = no_tombstone_opt(&pkg, cfg.cost_rule, cell.budget, cfg.k)?;
                let value = coverage_value(&solved.opt_store, &idx)?;
                (solved.opt_store, value, None, Vec::new())
            }
            "fact_only_opt" => {
                let solved = fact_only_opt(&pkg, cfg.cost_rule, cell.budget, cfg.k)?;
                let value = coverage_value(&solved.opt_store, &idx)?;
                (solved.opt_store, value, None, Vec::new())
            }
            "summary_only_opt" => {
                let solved = summary_only_opt(&pkg, cfg.cost_rule, cell.budget, cfg.k)?;
                let value = coverage_value(&solved.opt_store, &idx)?;
                (solved.opt_store, value, None, Vec::new())
            }
            other => {
                return Err(Failure::Usage(format!("unknown method {other:?}")));
            }
        };

    let ratio = if opt.opt_value > 0.0 {
        Some(quantize6(value / opt.opt_value))
    } else {
        None
    };
    Ok(CellRow {
        seed: cell.seed,
        distribution: cell.distribution.clone(),
        package_id: pkg.package_id.clone(),
        budget: cell.budget,
        method: cell.method.clone(),
        cost_rule: cfg.cost_rule.as_str().to_string(),
        k: cfg.k,
        value: quantize6(value),
        opt_value: quantize6(opt.opt_value),
        ratio,
        invalidation_coverage: quantize6(invalidation_coverage(&store, &idx)?),
        denominator_solver: opt.solver.to_string(),
        denominator_certified: opt.exact,
        lambda: lambda.map(quantize6),
        store: store.selected.iter().cloned().collect(),
        trace,
    })
}

fn evaluate_cell(cell: &Cell, cfg: &SweepConfig, pkg_bytes: &[u8]) -> Result<CellRow, Failure> {
    let hash = cell_hash(pkg_bytes, cell, cfg);
    let cache_path = cfg.out.join("cells").join(format!("{hash}.json"));
    if let Ok(cached) = std::fs::read_to_string(&cache_path) {
        if let Ok(row) = serde_json::from_str::<CellRow>(&cached) {
            return Ok(row);
        }
        // A torn or stale cell is recomputed and rewritten below.
    }
    let row = compute_cell(pkg_bytes, cell, cfg)?;
    let mut text = serde_json::to_string_pretty(&row).expect("cell rows always serialize");
    text.push('\n');
    write_file(&cache_path, &text)?;
    Ok(row)
}

#[derive(Serialize)]
struct GroupSummary {
    budget: f64,
    method: String,
    n: usize,
    n_ratios: usize,
    mean_ratio: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    mean_value: f64,
    mean_opt_value: f64,
    mean_invalidation_coverage: f64,
}

#[derive(Serialize)]
struct SweepSummary {
    cost_rule: String,
    k: usize,
    epsilon: f64,
    sigma: f64,
    resamples: u32,
    confidence: f64,
    bootstrap_seed: u64,
    methods: Vec<String>,
    budgets: Vec<f64>,
    cells: usize,
    groups: Vec<GroupSummary>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn run(args: SweepArgs) -> Result<(), Failure> {
    let cfg = SweepConfig::from_args(args)?;
    let manifest_text = read_file(&cfg.manifest)?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|err| Failure::Data(format!("{}: {err}", cfg.manifest.display())))?;
    if manifest.entries.is_empty() {
        return Err(Failure::Data(format!(
            "{}: manifest lists no packages",
            cfg.manifest.display()
        )));
    }

    // Load each package file once, keyed by resolved path.
    let mut packages: BTreeMap<PathBuf, Vec<u8>> = BTreeMap::new();
    let mut cells: Vec<Cell> = Vec::new();
    let mut seen: BTreeSet<(PathBuf, u64, String)> = BTreeSet::new();
    for entry in &manifest.entries {
        let path = manifest_relative(&cfg.manifest, &entry.package);
        if !packages.contains_key(&path) {
            packages.insert(path.clone(), read_bytes(&path)?);
        }
        let budgets = cfg.budgets.as_ref().unwrap_or(&entry.budgets);
        if budgets.is_empty() {
            return Err(Failure::Data(format!(
                "{}: entry for seed {} lists no budgets",
                cfg.manifest.display(),
                entry.seed
            )));
        }
        for &budget in budgets {
            if !(budget.is_finite() && budget > 0.0) {
                return Err(Failure::Data(format!(
                    "{}: budget {budget} for seed {} is not positive",
                    cfg.manifest.display(),
                    entry.seed
                )));
            }
            for method in &cfg.methods {
                if seen.insert((path.clone(), budget_key(budget), method.clone())) {
                    cells.push(Cell {
                        package_path: path.clone(),
                        seed: entry.seed,
                        distribution: entry.distribution.clone(),
                        budget,
                        method: method.clone(),
                    });
                }
            }
        }
    }

    let mut rows: Vec<CellRow> = with_pool(cfg.jobs, || {
        cells
            .par_iter()
            .map(|cell| evaluate_cell(cell, &cfg, &packages[&cell.package_path]))
            .collect::<Result<Vec<CellRow>, Failure>>()
    })??;

    rows.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(budget_key(a.budget).cmp(&budget_key(b.budget)))
            .then(a.method.cmp(&b.method))
    });

    // Single collector from here down.
    let results_path = cfg.out.join("results.csv");
    let mut csv_text = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut csv_text);
        writer
            .write_record([
                "seed",
                "distribution",
                "package_id",
                "budget",
                "method",
                "cost_rule",
                "k",
                "value",
                "opt_value",
                "ratio",
                "invalidation_coverage",
                "denominator_solver",
                "denominator_certified",
            ])
            .and_then(|()| {
                for row in &rows {
                    writer.write_record([
                        row.seed.to_string(),
                        row.distribution.clone(),
                        row.package_id.clone(),
                        format6(row.budget),
                        row.method.clone(),
                        row.cost_rule.clone(),
                        row.k.to_string(),
                        format6(row.value),
                        format6(row.opt_value),
                        row.ratio.map(format6).unwrap_or_default(),
                        format6(row.invalidation_coverage),
                        row.denominator_solver.clone(),
                        row.denominator_certified.to_string(),
                    ])?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|err| Failure::Data(format!("cannot build results CSV: {err}")))?;
    }
    let csv_text = String::from_utf8(csv_text).expect("CSV output is UTF-8");
    write_file(&results_path, &csv_text)?;

    // Per-(budget, method) aggregation in deterministic order.
    let mut groups: BTreeMap<(u64, String), Vec<&CellRow>> = BTreeMap::new();
    for row in &rows {
        groups
            .entry((budget_key(row.budget), row.method.clone()))
            .or_default()
            .push(row);
    }
    let mut summaries = Vec::with_capacity(groups.len());
    for ((budget_bits, method), members) in &groups {
        let budget = f64::from_bits(*budget_bits);
        let ratios: Vec<f64> = members.iter().filter_map(|r| r.ratio).collect();
        let method_salt = METHOD_REGISTRY
            .iter()
            .position(|m| m == method)
            .unwrap_or(METHOD_REGISTRY.len()) as u64;
        let ci = if cfg.resamples > 0 && !ratios.is_empty() {
            let seed = mix_seed(cfg.bootstrap_seed, budget_bits ^ method_salt);
            Some(bootstrap_ci(&ratios, cfg.resamples, cfg.confidence, seed)?)
        } else {
            None
        };
        summaries.push(GroupSummary {
            budget,
            method: method.clone(),
            n: members.len(),
            n_ratios: ratios.len(),
            mean_ratio: (!ratios.is_empty()).then(|| quantize6(mean(&ratios))),
            ci_lo: ci.map(|(lo, _)| quantize6(lo)),
            ci_hi: ci.map(|(_, hi)| quantize6(hi)),
            mean_value: quantize6(mean(
                &members.iter().map(|r| r.value).collect::<Vec<f64>>(),
            )),
            mean_opt_value: quantize6(mean(
                &members.iter().map(|r| r.opt_value).collect::<Vec<f64>>(),
            )),
            mean_invalidation_coverage: quantize6(mean(
                &members
                    .iter()
                    .map(|r| r.invalidation_coverage)
                    .collect::<Vec<f64>>(),
            )),
        });
    }

    let budget_bits: BTreeSet<u64> = groups.keys().map(|(bits, _)| *bits).collect();
    let budgets: Vec<f64> = budget_bits.iter().map(|&b| f64::from_bits(b)).collect();

    let summary = SweepSummary {
        cost_rule: cfg.cost_rule.as_str().to_string(),
        k: cfg.k,
        epsilon: cfg.epsilon,
        sigma: cfg.sigma,
        resamples: cfg.resamples,
        confidence: cfg.confidence,
        bootstrap_seed: cfg.bootstrap_seed,
        methods: cfg.methods.clone(),
        budgets,
        cells: rows.len(),
        groups: summaries,
    };
    let mut summary_text =
        serde_json::to_string_pretty(&summary).expect("summary always serializes");
    summary_text.push('\n');
    write_file(&cfg.out.join("summary.json"), &summary_text)?;

    let mut plot_text = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut plot_text);
        writer
            .write_record([
                "budget",
                "method",
                "n",
                "mean_ratio",
                "ci_lo",
                "ci_hi",
                "mean_invalidation_coverage",
            ])
            .and_then(|()| {
                for group in &summary.groups {
                    writer.write_record([
                        format6(group.budget),
                        group.method.clone(),
                        group.n.to_string(),
                        group.mean_ratio.map(format6).unwrap_or_default(),
                        group.ci_lo.map(format6).unwrap_or_default(),
                        group.ci_hi.map(format6).unwrap_or_default(),
                        format6(group.mean_invalidation_coverage),
                    ])?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|err| Failure::Data(format!("cannot build plot CSV: {err}")))?;
    }
    let plot_text = String::from_utf8(plot_text).expect("CSV output is UTF-8");
    write_file(&cfg.out.join("plot_data.csv"), &plot_text)?;

    if cfg.traces {
        let mut lines = String::new();
        for row in &rows {
            let line = serde_json::json!({
                "seed": row.seed,
                "package_id": row.package_id,
                "budget": row.budget,
                "method": row.method,
                "lambda": row.lambda,
                "store": row.store,
                "trace": row.trace,
            });
            lines.push_str(&line.to_string());
            lines.push('\n');
        }
        write_file(&cfg.out.join("traces.jsonl"), &lines)?;
    }

    println!(
        "{} cells -> {}",
        rows.len(),
        results_path.display()
    );
    Ok(())
}
