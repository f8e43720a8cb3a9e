use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use stiffpinn::problems::ProblemKind;
use stiffpinn::report::{run_experiment, ExperimentPlan, RunSettings};
use stiffpinn::train::Variant;

#[derive(Parser)]
#[command(
    name = "stiffpinn",
    version,
    about = "PINN training lab for Burgers and Allen-Cahn"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate a problem x variant x seed matrix.
    Run(RunArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// burgers, allen-cahn or all
    #[arg(long)]
    problem: Option<String>,
    /// standard, adaptive, adaptive-colloc or all
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Same as --seed.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat JSON file with any of the flags above; flags given here win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Reduced profile: 1,000 epochs, 2,000 interior points.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    n_f: Option<usize>,
    #[arg(long)]
    n_i: Option<usize>,
    #[arg(long)]
    n_b: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// Log progress every N epochs (0 = off).
    #[arg(long)]
    progress_every: Option<usize>,
    /// Write the final interior collocation points of each run to CSV.
    #[arg(long)]
    dump_points: bool,
}

/// Mirror of the CLI flags as they appear in a config file.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
struct FileConfig {
    problem: Option<String>,
    variant: Option<String>,
    seed: Option<SeedList>,
    seeds: Option<SeedList>,
    epochs: Option<usize>,
    finetune_epochs: Option<usize>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    desk_scale: Option<bool>,
    n_f: Option<usize>,
    n_i: Option<usize>,
    n_b: Option<usize>,
    pool_size: Option<usize>,
    progress_every: Option<usize>,
    dump_points: Option<bool>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SeedList {
    One(u64),
    Many(Vec<u64>),
    Text(String),
}

impl SeedList {
    fn into_vec(self) -> Result<Vec<u64>> {
        Ok(match self {
            SeedList::One(s) => vec![s],
            SeedList::Many(v) => v,
            SeedList::Text(s) => s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<u64>()
                        .with_context(|| format!("bad seed {p:?}"))
                })
                .collect::<Result<_>>()?,
        })
    }
}

fn parse_problems(s: &str) -> Result<Vec<ProblemKind>> {
    if s == "all" {
        return Ok(vec![ProblemKind::Burgers, ProblemKind::AllenCahn]);
    }
    Ok(vec![s.parse().map_err(|e| anyhow::anyhow!("{e}"))?])
}

fn parse_variants(s: &str) -> Result<Vec<Variant>> {
    if s == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    Ok(vec![s.parse().map_err(|e| anyhow::anyhow!("{e}"))?])
}

fn build_plan(args: RunArgs) -> Result<ExperimentPlan> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<FileConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => FileConfig::default(),
    };

    let desk = args.desk_scale || file.desk_scale.unwrap_or(false);
    let mut settings = if desk {
        RunSettings::desk_scale()
    } else {
        RunSettings::full_scale()
    };
    settings.epochs = args.epochs.or(file.epochs).unwrap_or(settings.epochs);
    settings.finetune_epochs = args
        .finetune_epochs
        .or(file.finetune_epochs)
        .unwrap_or(settings.finetune_epochs);
    settings.sampler.n_f = args.n_f.or(file.n_f).unwrap_or(settings.sampler.n_f);
    settings.sampler.n_i = args.n_i.or(file.n_i).unwrap_or(settings.sampler.n_i);
    settings.sampler.n_b = args.n_b.or(file.n_b).unwrap_or(settings.sampler.n_b);
    settings.sampler.pool_size = args
        .pool_size
        .or(file.pool_size)
        .unwrap_or(settings.sampler.pool_size);
    settings.progress_every = args.progress_every.or(file.progress_every).unwrap_or(500);
    settings.dump_points = args.dump_points || file.dump_points.unwrap_or(false);

    let Some(problem) = args.problem.or(file.problem) else {
        bail!("--problem is required");
    };
    let variant = args
        .variant
        .or(file.variant)
        .unwrap_or_else(|| "standard".into());
    let seeds = match args.seed.or(args.seeds) {
        Some(v) => v,
        None => match file.seeds.or(file.seed) {
            Some(s) => s.into_vec()?,
            None => vec![0],
        },
    };
    let out = args
        .out
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("results"));
    let jobs = args.jobs.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }

    Ok(ExperimentPlan {
        problems: parse_problems(&problem)?,
        variants: parse_variants(&variant)?,
        seeds,
        settings,
        out,
        jobs,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => build_plan(args).and_then(|plan| {
            let summary = run_experiment(&plan)?;
            for row in summary.rows.iter().filter(|r| r.seed == "median") {
                log::info!(
                    "{} {}: median rel_l2 {:.3e}, bc ({:.3e}, {:.3e}), residual {:.3e}",
                    row.problem,
                    row.variant,
                    row.rel_l2.unwrap_or(f64::NAN),
                    row.bc_left_mae.unwrap_or(f64::NAN),
                    row.bc_right_mae.unwrap_or(f64::NAN),
                    row.mean_sq_residual.unwrap_or(f64::NAN),
                );
            }
            Ok(summary.failures)
        }),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} run(s) aborted; see summary.csv");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
