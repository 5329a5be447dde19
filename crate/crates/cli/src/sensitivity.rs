//! `memsel sensitivity`: certified optima under both cost rules at k = 1
//! and k = 2, plus writer rankings per rule and their rank correlation.
//! Every optimum is cross-checked by the independent enumerator, so large
//! instances are rejected rather than silently approximated.

use std::path::PathBuf;

use clap::Args;

use memsel::format6;
use memsel::generator::generate_audit_suite;
use memsel::package::parse_package;
use memsel::scoring::sensitivity_audit;
use memsel::solver::DEFAULT_MAX_ASSIGNMENTS;

use crate::{parse_budget, read_file, write_file, Failure};

#[derive(Args)]
pub struct SensitivityArgs {
    /// Package file; omitted, an audit-sized instance is generated from the
    /// seed instead.
    #[arg(long)]
    package: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Budget. The default fits a couple of candidates under the
    /// byte-overhead rule, whose costs start at 9.
    #[arg(long, default_value_t = 24.0, value_parser = parse_budget)]
    budget: f64,
    /// Assignment-count cap for the enumeration cross-check.
    #[arg(long = "max-assignments", default_value_t = DEFAULT_MAX_ASSIGNMENTS)]
    max_assignments: u64,
    /// Output directory for sensitivity.json.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: SensitivityArgs) -> Result<(), Failure> {
    let pkg = match &args.package {
        Some(path) => parse_package(&read_file(path)?)
            .map_err(|err| Failure::Data(format!("{}: {err}", path.display())))?,
        None => {
            let mut suite = generate_audit_suite(1, args.seed);
            suite.remove(0).0
        }
    };

    let report = sensitivity_audit(&pkg, args.budget, args.seed, args.max_assignments)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report always serializes");
    text.push('\n');
    let path = args.out.join("sensitivity.json");
    write_file(&path, &text)?;

    if !report.certified {
        return Err(Failure::Certification(format!(
            "optima disagree between solvers on {}; see {}",
            pkg.package_id,
            path.display()
        )));
    }
    println!(
        "{}: k2/k1 word {}, byte {}, rank agreement {} -> {}",
        pkg.package_id,
        report
            .k2_over_k1_word
            .map(format6)
            .unwrap_or_else(|| "n/a".to_string()),
        report
            .k2_over_k1_byte
            .map(format6)
            .unwrap_or_else(|| "n/a".to_string()),
        format6(report.rank_agreement),
        path.display()
    );
    Ok(())
}
