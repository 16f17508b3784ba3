use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use encdp::noise::NoiseFamily;
use encdp_cli::commands::{self, out_dir, DEFAULT_CODEBOOK_SIZE};
use encdp_cli::l1::{l1_experiment, rows_table, L1Params};
use encdp_cli::output::{RunDir, Table};
use encdp_cli::{CliError, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "encdp", version, about = "Codebook-encoded private SGD: training, accounting and experiments")]
struct Cli {
    /// Run configuration (flat key = value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: runs/<name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Target δ for (ε, δ) conversion (default 1e-5, or the config value).
    #[arg(long, global = true)]
    delta: Option<f64>,

    /// Clip-and-Gaussian baseline instead of codebook encoding.
    #[arg(long, global = true)]
    baseline: bool,

    /// Print CSV instead of an aligned table.
    #[arg(long, global = true)]
    csv: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a codebook and write it to <out>/codebook.bin.
    GenCodebook {
        #[arg(long, default_value_t = DEFAULT_CODEBOOK_SIZE)]
        size: usize,
        /// Vector dimension (default: parameter count of the configured model).
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Privacy of the configured run at every RDP order.
    Account,
    /// Train and write the trajectory, summary and privacy report.
    Train,
    /// Train once per noise variance and tabulate accuracy against ε.
    Sweep {
        /// Noise family (default: family of the configured noise).
        #[arg(long)]
        family: Option<String>,
        #[arg(long, value_delimiter = ',')]
        variances: Vec<f64>,
    },
    /// L1 distortion of privatized gradients at matched order-2 RDP.
    L1Experiment {
        #[arg(long, value_delimiter = ',')]
        targets: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        families: Vec<String>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        codebook_size: Option<usize>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Histogram of raw per-example gradient coordinates at initialization.
    Histogram {
        #[arg(long, default_value_t = 100)]
        bins: usize,
    },
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(delta) = self.delta {
            cfg.delta = delta;
        }
        if self.baseline {
            cfg.baseline = true;
        }
        Ok(cfg)
    }

    fn show(&self, table: &Table, run: &RunDir) {
        if self.csv {
            print!("{}", table.to_csv(&run.comment()));
        } else {
            print!("{}", table.to_pretty());
        }
    }
}

fn parse_family(s: &str) -> Result<NoiseFamily> {
    Ok(s.parse::<NoiseFamily>()?)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenCodebook { size, dim } => {
            let cfg = cli.run_config()?;
            let dim = match dim {
                Some(d) => *d,
                None => commands::model_dim(&cfg)?,
            };
            let seed = cli.seed.unwrap_or(cfg.codebook_seed);
            let resolved = format!("size = {size}\ndim = {dim}\nseed = {seed}\n");
            let run = RunDir::create(&out_dir(cli.out.as_deref(), "codebook"), "codebook.resolved", &resolved)?;
            let path = run.path().join("codebook.bin");
            let hash = commands::gen_codebook(*size, dim, seed, &path)?;
            println!("{}  sha256={hash}", path.display());
        }
        Command::Account => {
            let cfg = cli.run_config()?;
            let run = RunDir::create(&out_dir(cli.out.as_deref(), &cfg.name), "config.resolved", &cfg.to_text())?;
            let res = commands::account(&cfg)?;
            run.write_csv("account.csv", &res.table)?;
            run.write("privacy.txt", &res.report_text)?;
            cli.show(&res.table, &run);
            if !cli.csv {
                println!(
                    "epsilon = {} at delta = {} (alpha = {})",
                    res.best.epsilon, res.best.delta, res.best.achieving_alpha
                );
            }
        }
        Command::Train => {
            let cfg = cli.run_config()?;
            let run = RunDir::create(&out_dir(cli.out.as_deref(), &cfg.name), "config.resolved", &cfg.to_text())?;
            let (_, summary) = commands::train_run(&cfg, &run)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep { family, variances } => {
            let cfg = cli.run_config()?;
            let family = match family {
                Some(f) => parse_family(f)?,
                None => cfg.schedule()?.spec_at(0).family(),
            };
            let grid = if variances.is_empty() { commands::default_grid(family)? } else { variances.clone() };
            let dir = out_dir(cli.out.as_deref(), &cfg.name);
            let run = RunDir::create(&dir, "sweep.resolved", &commands::sweep_resolved(&cfg, family, &grid))?;
            let table = commands::sweep(&cfg, family, &grid, &dir)?;
            run.write_csv("sweep.csv", &table)?;
            cli.show(&table, &run);
        }
        Command::L1Experiment { targets, families, dim, codebook_size, q, trials } => {
            let mut params = L1Params::default();
            if !targets.is_empty() {
                params.targets = targets.clone();
            }
            if !families.is_empty() {
                params.families = families.iter().map(|f| parse_family(f)).collect::<Result<_>>()?;
            }
            params.dim = dim.unwrap_or(params.dim);
            params.codebook_size = codebook_size.unwrap_or(params.codebook_size);
            params.q = q.unwrap_or(params.q);
            params.trials = trials.unwrap_or(params.trials);
            params.seed = cli.seed.unwrap_or(params.seed);
            let run = RunDir::create(&out_dir(cli.out.as_deref(), "l1-experiment"), "l1.resolved", &params.to_text())?;
            let table = rows_table(&l1_experiment(&params)?);
            run.write_csv("l1.csv", &table)?;
            cli.show(&table, &run);
        }
        Command::Histogram { bins } => {
            let cfg = cli.run_config()?;
            let run = RunDir::create(&out_dir(cli.out.as_deref(), &cfg.name), "config.resolved", &cfg.to_text())?;
            let table = commands::histogram(&cfg, *bins)?;
            run.write_csv("histogram.csv", &table)?;
            cli.show(&table, &run);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Config { .. } = e {
                if let Some(p) = cli.config.as_deref().map(Path::display) {
                    eprintln!("  in {p}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
