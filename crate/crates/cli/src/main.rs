//! `mlrcv`: generate synthetic classification data, sweep a lambda path
//! with single-fit CV estimates (and optionally the literal k-fold/LOO
//! oracle), and render sweep reports.
//!
//! Exit codes: 0 on success (flagged lambda points included), 2 on
//! unusable input (parse errors, bad arguments, version mismatch), 3 when
//! the solver failed at every lambda point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mlrcv_core::datagen::{self, SynthSpec};
use mlrcv_core::io;
use mlrcv_core::report::CvReport;
use mlrcv_core::solver::FitOptions;
use mlrcv_core::sweep::{run_sweep, EstimatorSet, GridSpec, LiteralKind, SweepConfig};

mod specfile;

#[derive(Parser)]
#[command(name = "mlrcv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a TOML spec file.
    Generate(GenerateArgs),
    /// Fit a lambda path and estimate CV errors.
    Sweep(SweepArgs),
    /// Render a sweep report as a table or CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML file describing the ensemble (see README for the schema).
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset path; `.csv` writes CSV, anything else LIBSVM.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset file (`.csv` or LIBSVM).
    #[arg(long)]
    data: PathBuf,
    /// Report output path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Elastic-net mixing: 1 = pure l1.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Comma-separated estimators: any of `acv`, `saacv`, `literal`.
    #[arg(long, default_value = "acv,saacv")]
    estimators: String,
    /// Fold count for the literal estimator; `loo` or a number. `auto`
    /// picks LOO when M <= 500 and 10-fold otherwise.
    #[arg(long, default_value = "auto")]
    kfold: String,
    /// Number of lambda grid points.
    #[arg(long, default_value_t = 50)]
    n_lambda: usize,
    /// Decades spanned below lambda_max.
    #[arg(long, default_value_t = 4.0)]
    decades: f64,
    /// Grid anchor override (defaults to the computed lambda_max).
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Solver convergence threshold on coordinate updates.
    #[arg(long, default_value_t = 1e-8)]
    delta: f64,
    /// Fixed-point convergence threshold for the self-averaging estimator.
    #[arg(long, default_value_t = 1e-6)]
    theta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rescale samples so per-class mean feature norms match (applies
    /// class-adaptive penalties on the original scale).
    #[arg(long, default_value_t = false)]
    rescale_by_class: bool,
    /// Refit literal-CV folds from zero instead of the full-data solution.
    #[arg(long, default_value_t = false)]
    literal_cold_start: bool,
    /// Stratify fold assignment by class.
    #[arg(long, default_value_t = false)]
    stratified: bool,
    /// Append a constant all-ones feature column (penalized like any
    /// other column; this is not an intercept).
    #[arg(long, default_value_t = false)]
    add_constant_feature: bool,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// Report file produced by `sweep`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| format!("cannot read spec {}: {e}", args.spec.display()))?;
    let mut spec: SynthSpec = specfile::parse_spec(&text)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| e.to_string())?;

    let w0 = datagen::gen_true_weights(&spec).map_err(|e| e.to_string())?;
    let dataset = datagen::gen_dataset(&w0, &spec).map_err(|e| e.to_string())?;
    io::write_dataset(&args.out, &dataset).map_err(|e| e.to_string())?;

    let sidecar = args.out.with_extension("true_weights.csv");
    io::write_true_weights(&sidecar, &w0).map_err(|e| e.to_string())?;

    println!(
        "wrote {} samples x {} features, {} classes to {} (centers: {})",
        dataset.n_samples(),
        dataset.n_features(),
        dataset.n_classes(),
        args.out.display(),
        sidecar.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_estimators(list: &str, kfold: &str, m: usize) -> Result<EstimatorSet, String> {
    let mut set = EstimatorSet::default();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item {
            "acv" => set.acv = true,
            "saacv" => set.saacv = true,
            "literal" => {
                let kind = match kfold {
                    "loo" => LiteralKind::Loo,
                    "auto" => {
                        if m <= 500 {
                            LiteralKind::Loo
                        } else {
                            LiteralKind::KFold(10)
                        }
                    }
                    other => {
                        let k: usize = other
                            .parse()
                            .map_err(|_| format!("bad --kfold value `{other}`"))?;
                        if k == m {
                            LiteralKind::Loo
                        } else {
                            LiteralKind::KFold(k)
                        }
                    }
                };
                set.literal = Some(kind);
            }
            other if other.starts_with("literal:") => {
                let spec = &other["literal:".len()..];
                set.literal = Some(if spec == "loo" || spec == &m.to_string() {
                    LiteralKind::Loo
                } else {
                    let k: usize = spec
                        .parse()
                        .map_err(|_| format!("bad estimator `{other}`"))?;
                    LiteralKind::KFold(k)
                });
            }
            other => return Err(format!("unknown estimator `{other}`")),
        }
    }
    if !set.acv && !set.saacv && set.literal.is_none() {
        return Err("no estimators requested".into());
    }
    Ok(set)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, String> {
    let mut dataset = io::read_dataset(&args.data)
        .map_err(|e| format!("cannot load {}: {e}", args.data.display()))?;
    if args.add_constant_feature {
        let mut feats = ndarray::Array2::ones((dataset.n_samples(), dataset.n_features() + 1));
        feats
            .slice_mut(ndarray::s![.., ..dataset.n_features()])
            .assign(dataset.features());
        dataset = mlrcv_core::Dataset::new(feats, dataset.labels().to_vec(), dataset.n_classes())
            .map_err(|e| e.to_string())?;
    }

    let estimators = parse_estimators(&args.estimators, &args.kfold, dataset.n_samples())?;
    let config = SweepConfig {
        grid: GridSpec {
            n_points: args.n_lambda,
            decades: args.decades,
            lambda_max: args.lambda_max,
            explicit: None,
        },
        eta: args.eta,
        estimators,
        seed: args.seed,
        fit_opts: FitOptions {
            tol_delta: args.delta,
            ..FitOptions::default()
        },
        theta: args.theta,
        rescale_by_class: args.rescale_by_class,
        literal_cold_start: args.literal_cold_start,
        stratified_folds: args.stratified,
        ..SweepConfig::default()
    };

    let report = run_sweep(&dataset, &config).map_err(|e| e.to_string())?;
    report.write(&args.out).map_err(|e| e.to_string())?;

    let flagged = report
        .records
        .iter()
        .filter(|r| !r.flags.is_empty())
        .count();
    println!(
        "wrote report for {} lambda points to {} ({flagged} flagged)",
        report.records.len(),
        args.out.display()
    );
    if report.all_points_failed() {
        eprintln!("error: solver failed to converge at every lambda point");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode, String> {
    let report = CvReport::read(&args.report).map_err(|e| e.to_string())?;
    match args.format {
        ReportFormat::Table => print!("{}", report.to_table()),
        ReportFormat::Csv => print!("{}", report.to_csv()),
    }
    Ok(ExitCode::SUCCESS)
}
