//! Command-line front end: `gen`, `build-library`, `solve`, `stats` and
//! `experiment`.

pub mod artifacts;
pub mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::rng::run_seed;
use crate::sigstats::{prune_by_pvalue, run_repeated_with_jobs, t_statistics, RunEnsemble, RunRecord};
use crate::synthgen::Dataset;
pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "sparse-choice", version, about = "Sparse identification of choice-probability specifications")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Md,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Table format printed to stdout.
    #[arg(long, value_enum, default_value = "md")]
    pub format: Format,
    /// Maximum concurrent runs.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one run's dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        run: usize,
        /// File to write instead of `<out>/dataset.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the library on a dataset.
    BuildLibrary {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve one dataset.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Run index recorded in the coefficient file.
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Significance table from coefficient files, or from fresh runs.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
        /// Long-form coefficient files to aggregate instead of running.
        #[arg(long, num_args = 1..)]
        coefficients: Vec<PathBuf>,
    },
    /// The full pipeline.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
        /// Also write the evaluated library of run 0.
        #[arg(long)]
        dump_library: bool,
    },
}

/// Successful exits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// No base function survived pruning for some alternative.
    RedFlag,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::RedFlag => 2,
        }
    }
}

struct Session {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    format: Format,
    jobs: Option<usize>,
}

impl Session {
    fn new(common: &Common) -> Result<Self> {
        let config = ExperimentConfig::load(&common.config)?;
        let seed = common.seed.unwrap_or(config.seed);
        let out = common.out.clone().unwrap_or_else(|| config.output_dir.clone());
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Session { config, seed, out, format: common.format, jobs: common.jobs })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Gen { common, run, output } => {
            let ctx = Session::new(&common)?;
            let plan = ctx.config.plan()?;
            let dataset = plan.dataset(ctx.seed, run).context("synthgen")?;
            let path = output.unwrap_or_else(|| ctx.path("dataset.csv"));
            dataset.write_csv(create(&path)?).context("synthgen")?;
            log::info!("wrote {}", path.display());
            Ok(Outcome::Success)
        }
        Command::BuildLibrary { common, dataset, output } => {
            let ctx = Session::new(&common)?;
            let plan = ctx.config.plan()?;
            let data = load_dataset(&ctx, dataset)?;
            let library = plan.library(&data).context("featlib")?;
            let path = output.unwrap_or_else(|| ctx.path("library.csv"));
            library.write_csv(create(&path)?).context("featlib")?;
            println!(
                "{} rows × {} columns, {} zero columns, {} duplicate pairs",
                library.rows(),
                library.cols(),
                library.zero_columns().len(),
                library.duplicate_pairs().len()
            );
            Ok(Outcome::Success)
        }
        Command::Solve { common, dataset, run, output } => {
            let ctx = Session::new(&common)?;
            let plan = ctx.config.plan()?;
            let data = load_dataset(&ctx, dataset)?;
            let library = plan.library(&data).context("featlib")?;
            let (coefficients, diagnostics) = plan.solve(&library, &data)?;
            let record = RunRecord {
                run,
                seed: run_seed(ctx.seed, run),
                names: library.names().to_vec(),
                labels: library.labels().to_vec(),
                coefficients,
                diagnostics,
            };
            let path = output.unwrap_or_else(|| ctx.path("coefficients.csv"));
            artifacts::write_coefficients(create(&path)?, std::slice::from_ref(&record), &plan.alternatives)?;
            artifacts::write_run_log(std::io::stdout().lock(), std::slice::from_ref(&record), &[], &plan.alternatives)?;
            Ok(Outcome::Success)
        }
        Command::Stats { common, runs, coefficients } => {
            let ctx = Session::new(&common)?;
            let ensemble = if coefficients.is_empty() {
                run_ensemble(&ctx, runs)?
            } else {
                let files = coefficients
                    .iter()
                    .map(|p| File::open(p).with_context(|| format!("opening {}", p.display())))
                    .collect::<Result<Vec<_>>>()?;
                artifacts::read_coefficients(files).context("sigstats")?
            };
            report(&ctx, &ensemble)
        }
        Command::Experiment { common, runs, dump_library } => {
            let ctx = Session::new(&common)?;
            let plan = ctx.config.plan()?;
            let dataset = plan.dataset(ctx.seed, 0).context("synthgen")?;
            dataset.write_csv(create(&ctx.path("dataset.csv"))?).context("synthgen")?;
            if dump_library {
                let library = plan.library(&dataset).context("featlib")?;
                library.write_csv(create(&ctx.path("library.csv"))?).context("featlib")?;
            }
            let ensemble = run_ensemble(&ctx, runs)?;
            report(&ctx, &ensemble)
        }
    }
}

fn load_dataset(ctx: &Session, path: Option<PathBuf>) -> Result<Dataset> {
    let path = path.unwrap_or_else(|| ctx.path("dataset.csv"));
    Dataset::load(&path).with_context(|| format!("synthgen: loading {}", path.display()))
}

/// Runs the ensemble and writes `coefficients.csv` and `run.log`.
fn run_ensemble(ctx: &Session, runs: Option<usize>) -> Result<RunEnsemble> {
    let plan = ctx.config.plan()?;
    let n_runs = runs.unwrap_or(ctx.config.n_runs);
    let ensemble = run_repeated_with_jobs(&plan, n_runs, ctx.seed, ctx.jobs).context("sigstats")?;
    artifacts::write_coefficients(create(&ctx.path("coefficients.csv"))?, &ensemble.runs, &ensemble.alternatives)?;
    artifacts::write_run_log(
        create(&ctx.path("run.log"))?,
        &ensemble.runs,
        &ensemble.failures,
        &ensemble.alternatives,
    )?;
    Ok(ensemble)
}

/// Writes `stats.csv`, `stats.md` and `pruned_model.txt`.
fn report(ctx: &Session, ensemble: &RunEnsemble) -> Result<Outcome> {
    let stats = t_statistics(ensemble).context("sigstats")?;
    let mut csv_bytes = Vec::new();
    stats.write_csv(&mut csv_bytes)?;
    let markdown = stats.to_markdown();
    std::fs::write(ctx.path("stats.csv"), &csv_bytes)?;
    std::fs::write(ctx.path("stats.md"), &markdown)?;
    let pruned = prune_by_pvalue(&stats, ctx.config.alpha).context("sigstats")?;
    let rendered = pruned.render();
    std::fs::write(ctx.path("pruned_model.txt"), &rendered)?;
    match ctx.format {
        Format::Csv => print!("{}", String::from_utf8_lossy(&csv_bytes)),
        Format::Md => print!("{markdown}"),
    }
    println!();
    print!("{rendered}");
    if pruned.red_flag() {
        log::warn!("red flag: library does not explain every alternative");
        Ok(Outcome::RedFlag)
    } else {
        Ok(Outcome::Success)
    }
}
