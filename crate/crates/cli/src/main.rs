use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esd_universality::ensembles::{generate, EnsembleConfig};
use esd_universality::experiment::{run, verify_manifest, ExperimentSpec};
use esd_universality::lemmas::{fuzz_lemmas, FuzzOptions, LemmaId};
use esd_universality::linalg::UpperHalfPoint;
use esd_universality::mp_law::{mp_cdf, mp_pdf, mp_stieltjes, mp_support};
use esd_universality::spectra::{
    ks_distance, sample_cov_spectrum, stieltjes_gap, MpReference, Reference,
};
use esd_universality::Error;

/// Environment variable holding the worker-thread count.
const WORKERS_ENV: &str = "ESDU_WORKERS";

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "esdu",
    version,
    about = "Spectral universality experiments for sample covariance matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Marchenko-Pastur law queries.
    Mp {
        #[command(subcommand)]
        query: MpQuery,
    },
    /// Draw one ensemble from a config file and write both spectra as CSV.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "simulate_out")]
        out: PathBuf,
    },
    /// Run a universality or mp-convergence spec.
    Universality(SpecArgs),
    /// Run a concentration-battery spec.
    Concentration(SpecArgs),
    /// Run an assumption-diagnostics spec.
    Diagnose(SpecArgs),
    /// Resolvent inequality checks.
    Lemmas {
        #[command(subcommand)]
        action: LemmaAction,
    },
    /// Run any experiment spec.
    Run(SpecArgs),
    /// Recompute the digests listed in a run manifest.
    VerifyManifest { dir: PathBuf },
}

#[derive(clap::Args)]
struct SpecArgs {
    spec: PathBuf,
    /// Overrides the output directory named in the spec.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MpQuery {
    Cdf {
        #[arg(long)]
        y: f64,
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long)]
        json: bool,
    },
    Pdf {
        #[arg(long)]
        y: f64,
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long)]
        json: bool,
    },
    /// Prints `a b mass_at_zero`.
    Support {
        #[arg(long)]
        y: f64,
        #[arg(long)]
        json: bool,
    },
    /// Stieltjes transform at `re + i im`.
    Stieltjes {
        #[arg(long)]
        y: f64,
        #[arg(long, allow_hyphen_values = true)]
        re: f64,
        #[arg(long)]
        im: f64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum LemmaAction {
    Fuzz {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Restrict to these lemmas (repeatable).
        #[arg(long = "lemma")]
        lemmas: Vec<String>,
        #[arg(long)]
        json: bool,
    },
}

/// Shortest decimal that round-trips, which never exceeds 17 significant
/// digits.
fn num(x: f64) -> String {
    format!("{x}")
}

fn print_values(names: &[&str], values: &[f64], json: bool) {
    if json {
        let obj: serde_json::Map<String, serde_json::Value> = names
            .iter()
            .zip(values)
            .map(|(n, v)| (n.to_string(), serde_json::json!(v)))
            .collect();
        println!("{}", serde_json::Value::Object(obj));
    } else {
        println!(
            "{}",
            values.iter().map(|&v| num(v)).collect::<Vec<_>>().join(" ")
        );
    }
}

fn mp_query(q: MpQuery) -> Result<ExitCode, Error> {
    match q {
        MpQuery::Cdf { y, lambda, json } => print_values(&["cdf"], &[mp_cdf(lambda, y)?], json),
        MpQuery::Pdf { y, lambda, json } => print_values(&["pdf"], &[mp_pdf(lambda, y)?], json),
        MpQuery::Support { y, json } => {
            let (a, b, mass) = mp_support(y)?;
            print_values(&["a", "b", "mass_at_zero"], &[a, b, mass], json);
        }
        MpQuery::Stieltjes { y, re, im, json } => {
            let s = mp_stieltjes(UpperHalfPoint::new(re, im)?, y)?;
            print_values(&["re", "im"], &[s.re, s.im], json);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(config: &Path, out: &Path) -> Result<ExitCode, Error> {
    let config: EnsembleConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
    config.validate()?;
    let hash = config.config_hash();
    let sample = generate(&config)?;
    let sy = sample_cov_spectrum(&sample.y)?.with_provenance(config.seed, hash.clone());
    let sz = sample_cov_spectrum(&sample.z)?.with_provenance(config.seed, hash.clone());
    fs::create_dir_all(out)?;
    fs::write(out.join("eigenvalues_y.csv"), sy.to_csv())?;
    fs::write(out.join("eigenvalues_z.csv"), sz.to_csv())?;
    let mp = MpReference::new(config.p as f64 / config.n as f64)?;
    let gap = stieltjes_gap(&sy, &sz, &[UpperHalfPoint::i()])?;
    println!("config_hash\t{hash}");
    println!("ks_y_mp\t{}", num(ks_distance(Reference::Law(&mp), &sy)));
    println!("ks_y_z\t{}", num(ks_distance(Reference::Sample(&sz), &sy)));
    println!("gap_at_i\t{}", num(gap.gap[0]));
    Ok(ExitCode::SUCCESS)
}

fn run_spec(args: &SpecArgs, allowed: &[&str]) -> Result<ExitCode, Error> {
    let spec = ExperimentSpec::from_path(&args.spec)?;
    if !allowed.is_empty() && !allowed.contains(&spec.kind()) {
        return Err(Error::SpecValidation {
            field: "kind".into(),
            message: format!("expected one of {allowed:?}, got {:?}", spec.kind()),
        });
    }
    let outcome = run(&spec, args.out.as_deref())?;
    print!("{}", outcome.summary);
    println!("manifest: {}", outcome.dir.join("manifest.json").display());
    println!("{}", if outcome.pass { "PASS" } else { "FAIL" });
    Ok(if outcome.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    })
}

fn lemma_fuzz(count: usize, seed: u64, names: &[String], json: bool) -> Result<ExitCode, Error> {
    let ids = if names.is_empty() {
        LemmaId::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<LemmaId>, _>>()?
    };
    let summary = fuzz_lemmas(&ids, count, &FuzzOptions::default(), seed)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("lemma\tinstances\tfailures\tmin_margin\ttight");
        for l in &summary.lemmas {
            println!(
                "{}\t{}\t{}\t{:.3e}\t{}",
                l.lemma, l.instances, l.failures, l.min_margin, l.tight
            );
        }
    }
    Ok(if summary.total_failures() == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    })
}

fn verify(dir: &Path) -> Result<ExitCode, Error> {
    let bad = verify_manifest(dir)?;
    if bad.is_empty() {
        println!("all digests match");
        return Ok(ExitCode::SUCCESS);
    }
    for m in &bad {
        println!(
            "mismatch {}: expected {}, found {}",
            m.path,
            m.expected,
            m.actual.as_deref().unwrap_or("<missing>")
        );
    }
    Ok(ExitCode::from(EXIT_FAIL))
}

fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{WORKERS_ENV} must be a positive integer, got {raw:?}"))?;
    if threads == 0 {
        return Err(format!("{WORKERS_ENV} must be a positive integer"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_workers() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match cli.command {
        Command::Mp { query } => mp_query(query),
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Universality(args) => run_spec(&args, &["universality", "mp-convergence"]),
        Command::Concentration(args) => run_spec(&args, &["concentration-battery"]),
        Command::Diagnose(args) => run_spec(&args, &["assumption-diagnostics"]),
        Command::Run(args) => run_spec(&args, &[]),
        Command::Lemmas {
            action:
                LemmaAction::Fuzz {
                    count,
                    seed,
                    lemmas,
                    json,
                },
        } => lemma_fuzz(count, seed, &lemmas, json),
        Command::VerifyManifest { dir } => verify(&dir),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_USAGE)
    })
}
