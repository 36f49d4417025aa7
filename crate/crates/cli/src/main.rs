//! `latent-ensemble` command-line interface.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid input, 4 numerical or model failure, 5 I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_ensemble::evaluation::evaluate;
use latent_ensemble::experiment::{
    fit_unsupervised, run_seed, summarize, table_row, Method, SeedOutcome, StructureSource, TABLE_HEADER,
};
use latent_ensemble::io::{from_json, read_labels_file, read_scores_file, to_json, write_labels, write_scores};
use latent_ensemble::model::{combine, sample_covariance};
use latent_ensemble::report::{StructureReport, TruthReport, WeightReport};
use latent_ensemble::simulation::{scenario, scenario_presets, simulate, ScenarioConfig};
use latent_ensemble::structure::discover;
use latent_ensemble::Error;
use rayon::prelude::*;

const OUT_ENV: &str = "LATENT_ENSEMBLE_OUT";

#[derive(Parser)]
#[command(name = "latent-ensemble", version, about = "Unsupervised ensembles of dependent predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one dataset from a reference scenario.
    Simulate(SimulateArgs),
    /// Estimate the latent group structure of a score matrix.
    Discover(DiscoverArgs),
    /// Estimate ensemble weights.
    Fit(FitArgs),
    /// Score a weight file against labels.
    Evaluate(EvaluateArgs),
    /// Run every method on all three scenarios over many seeds.
    #[command(name = "reproduce-table2")]
    ReproduceTable2(TableArgs),
    /// Refit under forced numbers of latent models.
    #[command(name = "sensitivity-k")]
    SensitivityK(SensitivityArgs),
}

#[derive(Args)]
struct OutDir {
    /// Default output directory.
    #[arg(long, env = OUT_ENV, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario number (1, 2 or 3).
    #[arg(long)]
    scenario: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample size; the scenario default when omitted.
    #[arg(long)]
    n: Option<usize>,
    /// Directory receiving scores.csv, labels.csv and truth.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    dir: OutDir,
}

#[derive(Args)]
struct DiscoverArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Number of latent models; chosen from the spectrum when omitted.
    #[arg(long)]
    k: Option<usize>,
    /// Structure JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    dir: OutDir,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    Cqo,
    Mf,
    Eigen,
    Average,
}

impl FitMethod {
    fn method(self) -> Method {
        match self {
            FitMethod::Cqo => Method::Cqo,
            FitMethod::Mf => Method::Mf,
            FitMethod::Eigen => Method::Eigen,
            FitMethod::Average => Method::Average,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: FitMethod,
    #[arg(long)]
    scores: PathBuf,
    /// Structure JSON from `discover`.
    #[arg(long, conflicts_with = "k")]
    structure: Option<PathBuf>,
    /// Discover the structure with this many latent models.
    #[arg(long)]
    k: Option<usize>,
    /// Weights JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    dir: OutDir,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Weights JSON from `fit`.
    #[arg(long)]
    weights: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the one-row CSV report here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write long-format decile counts here.
    #[arg(long)]
    deciles: Option<PathBuf>,
    #[command(flatten)]
    dir: OutDir,
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureChoice {
    /// Discover the structure on every seed.
    Discovered,
    /// Use the simulated assignment.
    Truth,
}

#[derive(Args)]
struct TableArgs {
    /// Number of seeds per scenario.
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, value_enum, default_value = "discovered")]
    structure: StructureChoice,
    /// Aggregate CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    dir: OutDir,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long, default_value_t = 2)]
    scenario: usize,
    /// Values of K: an inclusive range `a..b` or a comma list.
    #[arg(long, default_value = "2..8")]
    k: String,
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Comparison CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    dir: OutDir,
}

enum Failure {
    Usage(String),
    Model(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 5,
        Error::NonFiniteSpectrum
        | Error::ZeroVariance
        | Error::DegenerateDenominator { .. }
        | Error::NoUsableEquations
        | Error::SolverDiverged { .. }
        | Error::EigenFailure
        | Error::SvdFailure
        | Error::NonConvergence { .. } => 4,
        _ => 3,
    }
}

fn report_failure(code: &str, message: &str) {
    let json = serde_json::json!({ "error": code, "message": message });
    eprintln!("{json}");
    eprintln!("error: {message}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_failure("usage", e.to_string().lines().next().unwrap_or("invalid arguments"));
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            report_failure("usage", &msg);
            ExitCode::from(2)
        }
        Err(Failure::Model(e)) => {
            report_failure(e.code(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Discover(a) => cmd_discover(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::ReproduceTable2(a) => cmd_benchmark(a),
        Command::SensitivityK(a) => cmd_sensitivity(a),
    }
}

fn resolve(explicit: Option<PathBuf>, dir: &OutDir, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| dir.out_dir.join(default_name))
}

/// Writes through a temporary file in the destination directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    use std::io::Write;
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(Error::from)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(Error::from)?;
    tmp.write_all(bytes).map_err(Error::from)?;
    tmp.as_file().sync_all().map_err(Error::from)?;
    tmp.persist(path).map_err(|e| Error::from(e.error))?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let mut config = scenario(a.scenario)?.with_seed(a.seed);
    if let Some(n) = a.n {
        config = config.with_n(n);
    }
    let (scores, truth) = simulate::<f64>(&config)?;
    let dir = a.out.unwrap_or(a.dir.out_dir);
    let mut buf = Vec::new();
    write_scores(&scores, &mut buf)?;
    write_atomic(&dir.join("scores.csv"), &buf)?;
    buf.clear();
    write_labels(&truth.labels, &mut buf)?;
    write_atomic(&dir.join("labels.csv"), &buf)?;
    write_atomic(&dir.join("truth.json"), to_json(&TruthReport::new(&config, &truth))?.as_bytes())?;
    println!(
        "simulated {} seed {}: {} samples x {} predictors -> {}",
        config.name,
        config.seed,
        scores.n_samples(),
        scores.n_predictors(),
        dir.display()
    );
    Ok(())
}

fn cmd_discover(a: DiscoverArgs) -> CliResult<()> {
    let scores = read_scores_file::<f64>(&a.scores)?;
    let d = discover(&scores, a.k)?;
    let path = resolve(a.out, &a.dir, "structure.json");
    write_atomic(&path, to_json(&StructureReport::from_discovery(&d))?.as_bytes())?;
    println!("K = {} ({:?}), group sizes {:?} -> {}", d.structure.k(), d.spectrum.selection_rule, d.structure.group_sizes(), path.display());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let method = a.method.method();
    let scores = read_scores_file::<f64>(&a.scores)?;
    let z = scores.ensure_standardized()?;
    let cov = sample_covariance(&z)?;
    let needs_structure = matches!(method, Method::Cqo | Method::Mf);
    let structure = match (&a.structure, needs_structure) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            Some(from_json::<StructureReport>(&text)?.to_structure()?)
        }
        (None, true) => Some(discover(&scores, a.k)?.structure),
        (None, false) => None,
    };
    let st = match &structure {
        Some(s) => {
            if s.n_predictors() != cov.dim() {
                return Err(Error::LengthMismatch { expected: cov.dim(), found: s.n_predictors() }.into());
            }
            s.clone()
        }
        None => latent_ensemble::LatentStructure::singletons(cov.dim())?,
    };
    let (w, mut report) = fit_unsupervised(method, &cov, &st)?;
    report = report.with_names(scores.names());
    if let Some(s) = &structure {
        report = report.with_structure(StructureReport::from_structure(s));
    }
    let path = resolve(a.out, &a.dir, "weights.json");
    write_atomic(&path, to_json(&report)?.as_bytes())?;
    println!("{} weights for {} predictors -> {}", method.name(), w.len(), path.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let scores = read_scores_file::<f64>(&a.scores)?;
    let labels = read_labels_file(&a.labels)?;
    let text = std::fs::read_to_string(&a.weights).map_err(Error::from)?;
    let weights: WeightReport = from_json(&text)?;
    let g = combine(&scores, &weights.to_weights()?)?;
    let report = evaluate(&weights.method, &g, &labels)?;
    let path = resolve(a.out, &a.dir, "evaluation.json");
    write_atomic(&path, to_json(&report)?.as_bytes())?;
    if let Some(csv) = &a.csv {
        let body = format!("{}\n{}\n", latent_ensemble::evaluation::EvalReport::CSV_HEADER, report.csv_row());
        write_atomic(csv, body.as_bytes())?;
    }
    if let Some(dec) = &a.deciles {
        let mut body = String::from("method,decile,positives\n");
        for row in report.decile_rows() {
            body.push_str(&row);
            body.push('\n');
        }
        write_atomic(dec, body.as_bytes())?;
    }
    println!("{}: ROC-AUC {:.4}, PRC-AUC {:.4} -> {}", report.method_name, report.roc_auc, report.prc_auc, path.display());
    Ok(())
}

fn sweep(config: &ScenarioConfig, seeds: std::ops::Range<u64>, source: StructureSource, methods: &[Method]) -> CliResult<Vec<SeedOutcome>> {
    // Parallel over seeds; collect preserves seed order.
    let outcomes: Result<Vec<SeedOutcome>, Error> =
        seeds.into_par_iter().map(|seed| run_seed(config, seed, source, methods)).collect();
    Ok(outcomes?)
}

fn cmd_benchmark(a: TableArgs) -> CliResult<()> {
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be positive".into()));
    }
    let source = match a.structure {
        StructureChoice::Discovered => StructureSource::Discovered,
        StructureChoice::Truth => StructureSource::Truth,
    };
    let mut body = format!("{TABLE_HEADER}\n");
    for config in scenario_presets() {
        let outcomes = sweep(&config, a.first_seed..a.first_seed + a.seeds, source, &Method::ALL)?;
        for m in Method::ALL {
            let s = summarize(&outcomes, m);
            if s.n_failed > 0 {
                log::warn!("{} {}: {} of {} seeds failed", config.name, m.name(), s.n_failed, a.seeds);
            }
            body.push_str(&table_row(&config.name, &s));
            body.push('\n');
        }
    }
    let path = resolve(a.out, &a.dir, "benchmark.csv");
    write_atomic(&path, body.as_bytes())?;
    print!("{body}");
    Ok(())
}

/// Parses `a..b` (inclusive) or `a,b,c`.
fn parse_k_list(spec: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("invalid K list '{spec}'; expected a..b or a,b,c");
    let ks: Vec<usize> = if let Some((lo, hi)) = spec.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(bad());
    }
    Ok(ks)
}

fn cmd_sensitivity(a: SensitivityArgs) -> CliResult<()> {
    let ks = parse_k_list(&a.k).map_err(Failure::Usage)?;
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be positive".into()));
    }
    let config = scenario(a.scenario)?;
    let methods = [Method::Mf, Method::Eigen];
    let mut body = format!("k,{TABLE_HEADER}\n");
    for &k in &ks {
        if k > config.m() {
            return Err(Error::InvalidK { k, m: config.m() }.into());
        }
        let outcomes = sweep(&config, a.first_seed..a.first_seed + a.seeds, StructureSource::ForcedK(k), &methods)?;
        for m in methods {
            body.push_str(&format!("{k},{}\n", table_row(&config.name, &summarize(&outcomes, m))));
        }
    }
    let path = resolve(a.out, &a.dir, "sensitivity_k.csv");
    write_atomic(&path, body.as_bytes())?;
    print!("{body}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_lists() {
        assert_eq!(parse_k_list("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_k_list("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_k_list("4, 2,8").unwrap(), vec![4, 2, 8]);
        assert!(parse_k_list("5..2").is_err());
        assert!(parse_k_list("0,1").is_err());
        assert!(parse_k_list("x").is_err());
    }

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(exit_code(&Error::Io("x".into())), 5);
        assert_eq!(exit_code(&Error::SvdFailure), 4);
        assert_eq!(exit_code(&Error::Parse { line: 1, column: 2, message: String::new() }), 3);
    }
}
