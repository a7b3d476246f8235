use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use homlab::config::{ExperimentKind, RunConfig};
use homlab::experiments::{self, ExperimentResult};
use homlab::output;

/// Stochastic homogenization experiments on the periodic lattice.
#[derive(Parser, Debug)]
#[command(name = "homlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample coefficient fields and record per-direction averages.
    Sample(RunArgs),
    /// Corrector moments across the configured sides.
    Corrector(RunArgs),
    /// Ensemble a_hom,L and its distance to a large-torus reference.
    Ahom(RunArgs),
    /// Shell statistics and decay slopes of Green's-function gradients.
    GreenStats(RunArgs),
    /// Two-scale remainder norms and their rate in eps.
    Twoscale(RunArgs),
    /// Any rate experiment: twoscale-rate, l2-rate or systematic-error.
    Rate(RunArgs),
    /// Exhaustive and exact identity suites on tiny tori.
    Verify(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration; a built-in default is used when absent.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated side lengths.
    #[arg(long, value_delimiter = ',')]
    sides: Option<Vec<usize>>,
    /// Realizations per side.
    #[arg(long)]
    realizations: Option<usize>,
    /// Output directory.
    #[arg(short, long, default_value = "homlab-out")]
    output: PathBuf,
}

const DEFAULTS: [(&str, &str); 7] = [
    ("sample", include_str!("../../../configs/sample.toml")),
    ("corrector", include_str!("../../../configs/corrector-moments-d3.toml")),
    ("ahom", include_str!("../../../configs/systematic-error-d2.toml")),
    ("green-stats", include_str!("../../../configs/green-decay-d3.toml")),
    ("twoscale", include_str!("../../../configs/twoscale-rate-d3.toml")),
    ("rate", include_str!("../../../configs/l2-rate-d3.toml")),
    ("verify", include_str!("../../../configs/verify.toml")),
];

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Self::Sample(a) => ("sample", a),
            Self::Corrector(a) => ("corrector", a),
            Self::Ahom(a) => ("ahom", a),
            Self::GreenStats(a) => ("green-stats", a),
            Self::Twoscale(a) => ("twoscale", a),
            Self::Rate(a) => ("rate", a),
            Self::Verify(a) => ("verify", a),
        }
    }

    fn accepts(name: &str, kind: ExperimentKind) -> bool {
        use ExperimentKind::*;
        match name {
            "sample" => true,
            "corrector" => kind == CorrectorMoments,
            "ahom" => kind == SystematicError,
            "green-stats" => kind == GreenDecay,
            "twoscale" => kind == TwoscaleRate,
            "rate" => matches!(kind, TwoscaleRate | L2Rate | SystematicError),
            "verify" => kind == VerifyIdentities,
            _ => false,
        }
    }
}

fn configure_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("HOMLAB_WORKERS") {
        let n: usize = v.parse().with_context(|| format!("HOMLAB_WORKERS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn execute(command: &Command) -> anyhow::Result<bool> {
    configure_workers()?;
    let (name, args) = command.parts();
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let text = DEFAULTS.iter().find(|(n, _)| *n == name).expect("default for every subcommand").1;
            RunConfig::from_toml(text)?
        }
    };
    let cfg = cfg.with_overrides(args.seed, args.sides.clone(), args.realizations)?;
    if !Command::accepts(name, cfg.experiment) {
        bail!("`{name}` cannot run a {} config", cfg.experiment.name());
    }
    let result: ExperimentResult = if name == "sample" {
        experiments::run_sample(&cfg)?
    } else {
        experiments::run(&cfg)?
    };
    output::write_run(&args.output, &cfg, &result)?;
    print!("{}", output::summary(&cfg, &result));
    Ok(result.passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
