//! Command-line front end: fit models on CSV data, run Monte-Carlo studies
//! from config files, run the oracle-validation suites, and convert between
//! dependence parameterizations.
//!
//! Exit codes: 0 success, 1 validation-suite failure or internal error,
//! 2 parse/input error, 3 dimension or partition mismatch, 4 model-condition
//! failure (not positive definite, not converged, rank deficient).

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ubmaud::error::Error;
use ubmaud::estimator::{fit, Dataset, FitOptions};
use ubmaud::inference::{apply_bh, beta_tests, gamma_tests, DfMode};
use ubmaud::io as ubio;
use ubmaud::params::{sigma_to_gamma, GammaVector};
use ubmaud::simgen::{run_study, ScenarioConfig};
use ubmaud::validate;
use ubmaud::PartitionVector;

#[derive(Parser)]
#[command(name = "ubmaud", version, about = "Multivariate regression with community-structured dependence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print extra progress information.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to covariate and outcome CSV files.
    Fit(FitArgs),
    /// Run a Monte-Carlo study from a scenario config (JSON or TOML).
    Simulate(SimulateArgs),
    /// Run the randomized dense-oracle and finite-difference suites.
    Validate(ValidateArgs),
    /// Convert between dependence parameterizations.
    Transform(TransformArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Covariate matrix CSV (rows = observations).
    x: PathBuf,
    /// Outcome matrix CSV (rows = observations, columns in partition order).
    y: PathBuf,
    /// Community sizes, e.g. 30,40,60.
    #[arg(long, value_delimiter = ',', required = true)]
    partition: Vec<usize>,
    /// Output path for the fit JSON; test tables land next to it.
    #[arg(long)]
    out: PathBuf,
    /// Apply Benjamini-Hochberg correction at this FDR level.
    #[arg(long)]
    fdr: Option<f64>,
    /// Also run the explicit FGLS re-estimation and report the deviation.
    #[arg(long)]
    fgls_check: bool,
    /// Input CSVs carry a single header row.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config file, .json or .toml.
    scenario: PathBuf,
    /// Output directory for report.json and the plot CSVs.
    #[arg(long)]
    out: PathBuf,
    /// Override the replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads (capped by UBMAUD_THREADS).
    #[arg(long)]
    workers: Option<usize>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value_t = Scale::Small)]
    scale: Scale,
    #[arg(long, default_value_t = 20260810)]
    seed: u64,
}

#[derive(Copy, Clone, ValueEnum)]
enum Scale {
    Small,
    Large,
}

#[derive(Args)]
struct TransformArgs {
    /// Dependence vector JSON to transform.
    #[arg(long, conflicts_with = "sigma")]
    gamma: Option<PathBuf>,
    /// Covariance JSON to pull back to gamma.
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// Community sizes, needed when the input document carries none.
    #[arg(long, value_delimiter = ',')]
    partition: Option<Vec<usize>>,
    /// Target representation.
    #[arg(long, value_enum)]
    to: Target,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Target {
    Rho,
    Upsilon,
    Omega,
    Sigma,
    Gamma,
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Parse(_) | Error::Io(_) | Error::InvalidPValue { .. } => 2,
        Error::DimensionMismatch(_)
        | Error::PartitionMismatch { .. }
        | Error::InvalidPartition(_)
        | Error::InvalidConfig(_)
        | Error::IndexOutOfRange { .. } => 3,
        Error::NotPositiveDefinite(_)
        | Error::NotConverged { .. }
        | Error::Singular(_)
        | Error::InadmissibleGamma(_)
        | Error::InadmissibleStart(_)
        | Error::NotMaudRepresentable { .. }
        | Error::RankDeficient(_)
        | Error::PerturbationNotPD { .. }
        | Error::RankDeficientContrast { .. }
        | Error::SingularContrastCovariance
        | Error::StructureViolation { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(cap) = std::env::var("UBMAUD_THREADS") {
        if let Ok(k) = cap.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
        }
    }
    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(args, cli.verbose),
        Command::Simulate(args) => cmd_simulate(args, cli.verbose),
        Command::Validate(args) => return cmd_validate(args),
        Command::Transform(args) => cmd_transform(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn read_matrix(path: &Path, header: bool) -> Result<nalgebra::DMatrix<f64>, Error> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ubio::read_dense_csv(std::io::BufReader::new(file), header).map_err(|err| match err {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn sibling_with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("fit");
    out.with_file_name(format!("{stem}_{suffix}"))
}

fn cmd_fit(args: &FitArgs, verbose: bool) -> Result<(), Error> {
    let x = read_matrix(&args.x, args.header)?;
    let y = read_matrix(&args.y, args.header)?;
    let part = PartitionVector::new(args.partition.clone())?;
    if part.total_dim() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "partition sums to {} but the outcome file has {} columns",
            part.total_dim(),
            y.ncols()
        )));
    }
    let data = Dataset::new(x, y, part)?;
    let opts = FitOptions { fgls_check: args.fgls_check, ..Default::default() };
    let result = fit(&data, &opts)?;
    if verbose {
        eprintln!(
            "converged in {} iterations, score norm {:.3e}, log-likelihood {:.6}",
            result.diagnostics.scoring.iterations,
            result.diagnostics.scoring.final_score_norm,
            result.diagnostics.scoring.log_likelihood
        );
    }
    let mut beta_table = beta_tests(&result, DfMode::StudentT);
    let mut gamma_table = gamma_tests(&result);
    if let Some(alpha) = args.fdr {
        apply_bh(&mut beta_table, alpha)?;
        apply_bh(&mut gamma_table, alpha)?;
    }
    let doc = ubio::FitDocument::from_result(&result);
    fs::write(&args.out, ubio::to_json_pretty(&doc)?)?;
    let beta_path = sibling_with_suffix(&args.out, "beta_tests.csv");
    ubio::write_test_table_csv(fs::File::create(&beta_path)?, &beta_table)?;
    let gamma_path = sibling_with_suffix(&args.out, "gamma_tests.csv");
    ubio::write_test_table_csv(fs::File::create(&gamma_path)?, &gamma_table)?;
    println!("fit written to {}", args.out.display());
    println!("test tables: {}, {}", beta_path.display(), gamma_path.display());
    if let Some(d) = result.diagnostics.fgls_max_abs_diff {
        println!("max |beta_ols - beta_fgls| = {d:.3e}");
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, verbose: bool) -> Result<(), Error> {
    let text = fs::read_to_string(&args.scenario)
        .map_err(|e| Error::Io(format!("{}: {e}", args.scenario.display())))?;
    let mut cfg = match args.scenario.extension().and_then(|e| e.to_str()) {
        Some("toml") => ScenarioConfig::from_toml(&text)?,
        _ => ScenarioConfig::from_json(&text)?,
    };
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let env_cap = std::env::var("UBMAUD_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    let workers = match (args.workers, env_cap) {
        (Some(w), Some(cap)) => Some(w.min(cap).max(1)),
        (Some(w), None) => Some(w.max(1)),
        (None, Some(cap)) => Some(cap.max(1)),
        (None, None) => None,
    };
    let report = match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            pool.install(|| run_study(&cfg))?
        }
        None => run_study(&cfg)?,
    };
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("report.json"), ubio::to_json_pretty(&report)?)?;
    ubio::write_loss_csv(fs::File::create(args.out.join("losses.csv"))?, &report)?;
    ubio::write_param_csv(fs::File::create(args.out.join("gamma_summary.csv"))?, &report)?;
    let meta = serde_json::json!({
        "elapsed_secs": report.elapsed_secs,
        "workers": workers,
        "replicates_completed": report.replicates_completed,
        "failures": report.failures.len(),
    });
    fs::write(args.out.join("run_meta.json"), serde_json::to_string_pretty(&meta).unwrap())?;
    if verbose {
        for p in &report.params {
            eprintln!(
                "{}: bias {:+.5} mcsd {:.5} ase {:.5} cp {:.3}",
                p.parameter, p.bias, p.mcsd, p.ase, p.coverage
            );
        }
    }
    println!(
        "{} replicates ({} failed) -> {}",
        report.replicates_completed,
        report.failures.len(),
        args.out.display()
    );
    println!(
        "median frobenius loss: fitted {:.4}, diagonal baseline {:.4}",
        report.median_loss(ubmaud::inference::Norm::Frobenius, false),
        report.median_loss(ubmaud::inference::Norm::Frobenius, true)
    );
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> ExitCode {
    let ub_cases = match args.scale {
        Scale::Small => 60,
        Scale::Large => 500,
    };
    let started = std::time::Instant::now();
    let reports = validate::standard_suites(args.seed, ub_cases);
    println!("{:<34} {:>6} {:>12} {:>10} {:>6}", "suite", "cases", "max_err", "threshold", "ok");
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<34} {:>6} {:>12.3e} {:>10.1e} {:>6}",
            r.name,
            r.cases,
            r.max_err,
            r.threshold,
            if r.passed() { "pass" } else { "FAIL" }
        );
        ok &= r.passed();
    }
    println!("elapsed: {:.2}s", started.elapsed().as_secs_f64());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn load_gamma(path: &Path, partition: &Option<Vec<usize>>) -> Result<GammaVector, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let doc: ubio::DependenceDocument = ubio::from_json_str(&text)?;
    let part = partition.clone().map(PartitionVector::new).transpose()?;
    doc.into_gamma(part)
}

fn write_or_print(out: &Option<PathBuf>, text: String) -> Result<(), Error> {
    match out {
        Some(p) => {
            fs::write(p, text)?;
            println!("written to {}", p.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_transform(args: &TransformArgs) -> Result<(), Error> {
    match (&args.gamma, &args.sigma, args.to) {
        (Some(gpath), None, Target::Rho) => {
            let g = load_gamma(gpath, &args.partition)?;
            write_or_print(
                &args.out,
                ubio::to_json_pretty(&ubio::DependenceDocument::from_rho(&g.to_rho()))?,
            )
        }
        (Some(gpath), None, Target::Upsilon) => {
            let g = load_gamma(gpath, &args.partition)?;
            write_or_print(&args.out, ubio::to_json_pretty(&ubio::UbDocument::from_matrix(&g.upsilon()))?)
        }
        (Some(gpath), None, Target::Omega) => {
            let g = load_gamma(gpath, &args.partition)?;
            write_or_print(&args.out, ubio::to_json_pretty(&ubio::UbDocument::from_matrix(&g.omega()))?)
        }
        (Some(gpath), None, Target::Sigma) => {
            let g = load_gamma(gpath, &args.partition)?;
            write_or_print(&args.out, ubio::to_json_pretty(&ubio::UbDocument::from_matrix(&g.sigma()?))?)
        }
        (None, Some(spath), Target::Gamma) => {
            let text = fs::read_to_string(spath)
                .map_err(|e| Error::Io(format!("{}: {e}", spath.display())))?;
            let doc: ubio::UbDocument = ubio::from_json_str(&text)?;
            let sigma = doc.into_matrix()?;
            if let Some(sizes) = &args.partition {
                if sigma.part().sizes() != sizes.as_slice() {
                    return Err(Error::PartitionMismatch {
                        left: sizes.clone(),
                        right: sigma.part().sizes().to_vec(),
                    });
                }
            }
            let gamma = sigma_to_gamma(&sigma)?;
            write_or_print(
                &args.out,
                ubio::to_json_pretty(&ubio::DependenceDocument::from_gamma(&gamma))?,
            )
        }
        (None, Some(_), _) => {
            Err(Error::InvalidConfig("a covariance input can only be transformed to gamma".into()))
        }
        (Some(_), None, Target::Gamma) => {
            Err(Error::InvalidConfig("the input is already a dependence vector".into()))
        }
        _ => Err(Error::InvalidConfig("exactly one of --gamma or --sigma is required".into())),
    }
}
