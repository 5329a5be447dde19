//! `memsel certify`: generate an audit suite and run both exact solvers on
//! every instance. Any value disagreement lists the offending rows and exits
//! with the certification-failure code.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;

use memsel::format6;
use memsel::generator::generate_audit_suite;
use memsel::package::CostRule;
use memsel::solver::{certify, CertificationRow, DEFAULT_MAX_ASSIGNMENTS};

use crate::{parse_k, with_pool, write_file, Failure};

#[derive(Args)]
pub struct CertifyArgs {
    /// Number of audit instances.
    #[arg(long, default_value_t = 1200, value_parser = clap::value_parser!(u32).range(1..))]
    n: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Selections per group.
    #[arg(long, default_value = "1", value_parser = parse_k)]
    k: usize,
    /// Assignment-count cap for the enumeration auditor.
    #[arg(long = "max-assignments", default_value_t = DEFAULT_MAX_ASSIGNMENTS)]
    max_assignments: u64,
    /// Worker threads; 0 means one per core.
    #[arg(long, default_value_t = 0)]
    jobs: u32,
    /// Output directory for certification.csv.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: CertifyArgs) -> Result<(), Failure> {
    let suite = generate_audit_suite(args.n, args.seed);
    let rows: Vec<CertificationRow> = with_pool(args.jobs, || {
        suite
            .par_iter()
            .map(|(pkg, budget)| {
                let idx = pkg.index(CostRule::Word)?;
                certify(&idx, *budget, args.k, args.max_assignments).map_err(Failure::from)
            })
            .collect::<Result<Vec<CertificationRow>, Failure>>()
    })??;

    let csv_path = args.out.join("certification.csv");
    let mut text = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut text);
        writer
            .write_record([
                "package_id",
                "budget",
                "k",
                "bnb_value",
                "audit_value",
                "equal",
                "max_diff",
                "nodes_explored",
            ])
            .and_then(|()| {
                for row in &rows {
                    writer.write_record([
                        row.package_id.clone(),
                        format6(row.budget),
                        row.k.to_string(),
                        format6(row.bnb_value),
                        format6(row.audit_value),
                        row.equal.to_string(),
                        format6(row.max_diff),
                        row.nodes_explored.to_string(),
                    ])?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|err| Failure::Data(format!("cannot build certification CSV: {err}")))?;
    }
    let text = String::from_utf8(text).expect("CSV output is UTF-8");
    write_file(&csv_path, &text)?;

    let unequal: Vec<&CertificationRow> = rows.iter().filter(|r| !r.equal).collect();
    let max_diff = rows.iter().map(|r| r.max_diff).fold(0.0f64, f64::max);
    if unequal.is_empty() {
        println!(
            "certified {}/{} instances, max diff {} -> {}",
            rows.len(),
            rows.len(),
            format6(max_diff),
            csv_path.display()
        );
        return Ok(());
    }
    for row in &unequal {
        eprintln!(
            "disagreement: {} budget {} k {}: bnb {} vs audit {} (diff {})",
            row.package_id,
            format6(row.budget),
            row.k,
            format6(row.bnb_value),
            format6(row.audit_value),
            format6(row.max_diff),
        );
    }
    Err(Failure::Certification(format!(
        "{} of {} instances disagree (max diff {})",
        unequal.len(),
        rows.len(),
        format6(max_diff)
    )))
}
