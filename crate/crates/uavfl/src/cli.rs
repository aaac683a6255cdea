//! Command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use uavfl_core::learning::harness::parse_schemes;
use uavfl_core::sca::SlackParams;

use crate::config::{Config, PAPER_DEFAULT};
use crate::experiment;
use crate::manifest::RunManifest;
use crate::output::{self, BaselineRow, OutDir, RoundLogRow, SummaryCsvRow, TraceCsvRow};
use crate::plot;
use crate::verify::{self, VerifyPlan};

#[derive(Debug, Parser)]
#[command(name = "uavfl", version, about = "UAV-assisted over-the-air federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// `paper_default` or a path to a TOML file.
    #[arg(long, default_value = PAPER_DEFAULT)]
    pub config: String,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the top-level `seed` of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize the trajectory and combining weights for round-0 gradients.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Train under each aggregation scheme and log every round.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of error-free, static-ps, circular, optimized.
        #[arg(long)]
        schemes: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run the oracle checks; exits nonzero if any fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Monte-Carlo trials per MSE instance.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Static server at the barycenter and the tuned circular trajectory.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Plot tables from earlier run directories.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// Run directory to read; repeatable.
        #[arg(long = "from", required = true)]
        from: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Optimize { .. } => "optimize",
            Command::Simulate { .. } => "simulate",
            Command::Verify { .. } => "verify",
            Command::Baseline { .. } => "baseline",
            Command::PlotData { .. } => "plot-data",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Optimize { common }
            | Command::Simulate { common, .. }
            | Command::Verify { common, .. }
            | Command::Baseline { common }
            | Command::PlotData { common, .. } => common,
        }
    }
}

fn load(common: &Common) -> Result<Config> {
    let mut config = Config::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.resolve()?;
    Ok(config)
}

fn optimize(config: &Config, out: &OutDir) -> Result<()> {
    let resolved = config.resolve()?;
    let rz = experiment::round_zero(&resolved)?;
    let res = experiment::optimize_trajectory(&rz, &resolved)?;
    out.write_rows(output::TRAJECTORY, output::trajectory_rows(&res.trajectory))?;
    out.write_rows(output::ZETA, output::zeta_rows(res.zeta()))?;
    out.write_rows(output::TRACE, res.trace.iter().map(TraceCsvRow::from))?;
    out.write_rows(output::COVERAGE, output::coverage_rows(res.coverage()))?;
    out.write_rows(output::DEVICES, output::device_rows(&rz.scenario))?;
    eprintln!(
        "optimize: {} outer iterations (converged: {}), rounded MSE {:.6e} from iteration {}",
        res.iterations,
        res.converged,
        res.rounded.mse(rz.dim),
        res.rounded_iter
    );
    Ok(())
}

fn baseline(config: &Config, out: &OutDir) -> Result<()> {
    let resolved = config.resolve()?;
    let rz = experiment::round_zero(&resolved)?;
    let (fixed, circle) = experiment::baselines(&rz, &resolved)?;
    let rows = [
        BaselineRow {
            scheme: "static-ps".into(),
            center_x: fixed.location.x,
            center_y: fixed.location.y,
            radius: None,
            objective: fixed.objective,
            mse: fixed.objective * rz.dim as f64,
        },
        BaselineRow {
            scheme: "circular".into(),
            center_x: circle.center.x,
            center_y: circle.center.y,
            radius: Some(circle.radius),
            objective: circle.rounded.objective,
            mse: circle.rounded.mse(rz.dim),
        },
    ];
    out.write_rows(output::BASELINES, &rows)?;
    out.write_rows(plot::CIRCULAR_TRAJECTORY, output::trajectory_rows(&circle.trajectory))?;
    out.write_rows(output::DEVICES, output::device_rows(&rz.scenario))?;
    for r in &rows {
        eprintln!("baseline {}: MSE {:.6e}", r.scheme, r.mse);
    }
    Ok(())
}

fn simulate(
    config: &mut Config,
    out: &OutDir,
    schemes: Option<&str>,
    rounds: Option<usize>,
    trials: Option<usize>,
) -> Result<()> {
    if let Some(list) = schemes {
        config.learning.schemes = parse_schemes(list)?.iter().map(|s| s.name().to_string()).collect();
    }
    if let Some(r) = rounds {
        config.learning.rounds = r;
    }
    if let Some(t) = trials {
        config.learning.trials = t;
    }
    let resolved = config.resolve()?;
    let report = experiment::simulate(&resolved)?;
    for trial in 0..resolved.experiment.trials {
        let rows = report.logs.iter().filter(|l| l.trial == trial).map(RoundLogRow::from);
        out.write_rows(&output::round_log_name(trial), rows)?;
    }
    out.write_rows(output::SUMMARY, report.summary.iter().map(SummaryCsvRow::from))?;
    out.write_rows(output::DEVICES, output::device_rows(&resolved.scenario))?;
    for &scheme in &resolved.experiment.schemes {
        if let Some(r) = report.final_row(scheme) {
            eprintln!(
                "simulate {}: final accuracy {:.4} ± {:.4} over {} trials",
                scheme, r.accuracy_mean, r.accuracy_std, r.trials
            );
        }
    }
    Ok(())
}

fn verify(config: &Config, out: &OutDir, trials: usize) -> Result<bool> {
    let scenario = config.scenario()?;
    let plan = VerifyPlan {
        mse_trials: trials,
        seed: config.seed,
        ..VerifyPlan::default()
    };
    let results = verify::run_all(&SlackParams::from_scenario(&scenario), &plan);
    for r in &results {
        println!("{r}");
    }
    out.write_rows("verify.csv", &results)?;
    Ok(results.iter().all(|r| r.passed))
}

/// Runs one command; `argv` is recorded in the manifest.
pub fn run(cli: Cli, argv: &[String]) -> Result<ExitCode> {
    let name = cli.command.name();
    let common = cli.command.common().clone();
    if let Command::Verify { trials: 0, .. } = cli.command {
        bail!("invalid `--trials`: must be at least 1");
    }
    let mut config = load(&common)?;
    let out = OutDir::create(&common.out)?;
    let mut ok = true;
    match &cli.command {
        Command::Optimize { .. } => optimize(&config, &out)?,
        Command::Baseline { .. } => baseline(&config, &out)?,
        Command::Simulate {
            schemes,
            rounds,
            trials,
            ..
        } => simulate(&mut config, &out, schemes.as_deref(), *rounds, *trials)?,
        Command::Verify { trials, .. } => ok = verify(&config, &out, *trials)?,
        Command::PlotData { from, .. } => {
            let sources: Vec<&std::path::Path> = from.iter().map(|p| p.as_path()).collect();
            let (map, curves) = plot::plot_data(&sources, &out)?;
            eprintln!("plot-data: {map} map rows, {curves} curve rows");
        }
    }
    RunManifest::new(name, argv, &common.config, &config, &out)?.write(&config, &out)?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
