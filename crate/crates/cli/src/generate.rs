//! `memsel generate`: sample packages from a named distribution and write a
//! suite manifest that `memsel sweep` consumes. Reruns with the same flags
//! produce byte-identical files.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use memsel::generator::{generate_with, Distribution};
use memsel::package::serialize_package;

use crate::{parse_budget, parse_distribution, read_file, write_file, Failure};

#[derive(Args)]
pub struct GenerateArgs {
    /// Sampling distribution.
    #[arg(long, default_value = "base", value_parser = parse_distribution)]
    distribution: Distribution,
    /// How many packages to sample, at seeds seed, seed+1, ...
    #[arg(long = "n-seeds", default_value_t = 500, value_parser = clap::value_parser!(u32).range(1..))]
    n_seeds: u32,
    /// First seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// JSON object of generator overrides layered onto the distribution
    /// defaults (unknown keys are rejected).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Budgets recorded per manifest entry for downstream sweeps.
    #[arg(long, value_delimiter = ',', value_parser = parse_budget)]
    budgets: Option<Vec<f64>>,
    /// Output directory; packages land in <out>/packages.
    #[arg(long)]
    out: PathBuf,
}

/// Suite manifest: one entry per generated package. Paths are relative to
/// the manifest file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub package: String,
    pub seed: u64,
    pub distribution: String,
    pub budgets: Vec<f64>,
}

pub fn run(args: GenerateArgs) -> Result<(), Failure> {
    let mut params = args.distribution.params();
    if let Some(path) = &args.params {
        let overrides = read_file(path)?;
        let patch: serde_json::Value = serde_json::from_str(&overrides)
            .map_err(|err| Failure::Data(format!("{}: {err}", path.display())))?;
        let serde_json::Value::Object(patch) = patch else {
            return Err(Failure::Usage(format!(
                "{}: overrides must be a JSON object",
                path.display()
            )));
        };
        let mut merged = serde_json::to_value(&params)
            .expect("generator parameters always serialize");
        let base = merged
            .as_object_mut()
            .expect("parameter serialization is an object");
        for (key, value) in patch {
            base.insert(key, value);
        }
        params = serde_json::from_value(merged)
            .map_err(|err| Failure::Usage(format!("{}: {err}", path.display())))?;
    }

    let budgets = args
        .budgets
        .clone()
        .unwrap_or_else(|| vec![2.0, 4.0, 8.0, 16.0]);

    let mut entries = Vec::with_capacity(args.n_seeds as usize);
    for i in 0..args.n_seeds {
        let seed = args.seed.wrapping_add(u64::from(i));
        let pkg = generate_with(&params, seed, args.distribution.as_str())?;
        let rel = format!("packages/{}.json", pkg.package_id);
        write_file(&args.out.join(&rel), &serialize_package(&pkg))?;
        entries.push(ManifestEntry {
            package: rel,
            seed,
            distribution: args.distribution.as_str().to_string(),
            budgets: budgets.clone(),
        });
    }

    let manifest = Manifest { entries };
    let manifest_path = args.out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)
        .expect("manifest serialization cannot fail");
    text.push('\n');
    write_file(&manifest_path, &text)?;
    println!("{}", manifest_path.display());
    Ok(())
}
