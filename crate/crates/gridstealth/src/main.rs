use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use gridstealth::dc_model::build_jacobian;
use gridstealth::error::Error;
use gridstealth::experiments::{
    run_experiment, ConfigOverrides, ExperimentConfig, ExperimentContext, ExperimentKind,
};
use gridstealth::matpower::parse_case;

#[derive(Parser)]
#[command(name = "gridstealth", version, about = "Stealthy Gaussian data-injection attack experiments for DC state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (or all of them) and write CSV datasets.
    Run(RunArgs),
    /// Parse a case file and report parser and model sanity checks.
    Validate {
        /// Path to the MATPOWER-style case file.
        #[arg(long)]
        case: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment name: utility_vs_rho, tradeoff, training_utility,
    /// frobenius_gap, detection, or all.
    #[arg(long)]
    experiment: String,
    /// Path to the MATPOWER-style case file.
    #[arg(long)]
    case: Option<PathBuf>,
    /// Optional flat key/value config file; CLI flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV datasets and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed for all Monte Carlo work.
    #[arg(long)]
    seed: Option<u64>,
    /// Target false alarm rate for detection experiments.
    #[arg(long)]
    alpha: Option<f64>,
    /// Sample-covariance realizations per grid point.
    #[arg(long)]
    trials: Option<usize>,
    /// Monte Carlo draws per detection estimate.
    #[arg(long)]
    n_mc: Option<usize>,
    /// Comma-separated correlation strengths in [0, 1).
    #[arg(long)]
    rho_grid: Option<String>,
    /// Comma-separated SNR values in dB.
    #[arg(long)]
    snr_grid: Option<String>,
    /// Comma-separated training set sizes.
    #[arg(long)]
    k_grid: Option<String>,
    /// Comma-separated block sizes for the detection experiment.
    #[arg(long)]
    block_grid: Option<String>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        // Bad inputs: config, flags, or case files that fail validation.
        Error::Config(_)
        | Error::Io(_)
        | Error::MalformedCase(_)
        | Error::SlackBusViolation(_)
        | Error::DegenerateBranch { .. }
        | Error::UnknownBus(_)
        | Error::InvalidCorrelationStrength(_)
        | Error::InvalidAlpha(_)
        | Error::InsufficientSamples { .. } => 1,
        // Numerical or model-construction failures.
        Error::IslandedNetwork
        | Error::DegenerateSystem
        | Error::ShapeError(_)
        | Error::DegenerateSignal
        | Error::NotPsd(_)
        | Error::NotPositiveDefinite
        | Error::UndefinedNormalization
        | Error::InsufficientMcResolution { .. } => 2,
    }
}

fn parse_grid<T: FromStr>(key: &str, value: &Option<String>) -> Result<Option<Vec<T>>, Error> {
    match value {
        Some(text) => Ok(Some(gridstealth::experiments::parse_grid_list(key, text)?)),
        None => Ok(None),
    }
}

fn run(args: RunArgs) -> Result<(), Error> {
    let kinds: Vec<ExperimentKind> = if args.experiment == "all" {
        ExperimentKind::ALL.to_vec()
    } else {
        vec![args.experiment.parse()?]
    };

    let file_overrides = match &args.config {
        Some(path) => ConfigOverrides::from_file(path)?,
        None => ConfigOverrides::default(),
    };
    let cli_overrides = ConfigOverrides {
        case_path: args.case.clone(),
        output_dir: args.out.clone(),
        seed: args.seed,
        trials: args.trials,
        alpha_target: args.alpha,
        n_mc: args.n_mc,
        rho_grid: parse_grid("rho_grid", &args.rho_grid)?,
        snr_grid_db: parse_grid("snr_grid", &args.snr_grid)?,
        k_grid: parse_grid("k_grid", &args.k_grid)?,
        block_grid: parse_grid("block_grid", &args.block_grid)?,
    };
    let overrides = cli_overrides.merged_over(file_overrides);

    for (i, &kind) in kinds.iter().enumerate() {
        let config = ExperimentConfig::resolve(kind, overrides.clone())?;
        let ctx = ExperimentContext::prepare(config, &kinds)?;
        if i == 0 {
            let path = ctx.write_manifest(&kinds)?;
            println!("wrote {}", path.display());
        }
        for path in run_experiment(&ctx, kind)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn validate(case_path: &PathBuf) -> Result<(), Error> {
    let text = std::fs::read_to_string(case_path)?;
    let case = parse_case(&text)?;
    println!("case: {}", case_path.display());
    println!("base_mva: {}", case.base_mva);
    println!("buses: {}", case.buses.len());
    println!(
        "branches: {} ({} in service)",
        case.branches.len(),
        case.in_service_branches().count()
    );
    println!("slack_bus: {}", case.slack_bus());
    let jac = build_jacobian(&case)?;
    let (m, n) = jac.matrix.shape();
    println!("measurements: {m}");
    println!("states: {n}");
    let rank = jac.matrix.clone().rank(1e-9);
    println!("rank: {rank}");
    if rank < n {
        return Err(Error::ShapeError(format!(
            "observation matrix is rank deficient: rank {rank} < {n} states"
        )));
    }
    println!("ok");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { case } => validate(&case),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
