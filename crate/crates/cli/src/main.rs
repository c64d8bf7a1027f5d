use std::path::PathBuf;
use std::process::ExitCode;

use bgcf::config::ExperimentConfig;
use bgcf::experiment;
use bgcf::training::gradcheck::{InstanceSpec, DEFAULT_STEP, DEFAULT_TOLERANCE};
use clap::{Args, Parser, Subcommand};

/// Behavior-weighted graph convolution recommender.
#[derive(Debug, Parser)]
#[command(name = "bgcf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the model seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> bgcf::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.model.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and write the best checkpoint, loss history and resolved config.
    Train(ConfigArgs),
    /// Score a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Single cut-off replacing the configured list.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Write top-k recommendations for every user.
    Recommend {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output CSV, gzip-compressed when it ends in `.gz`.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train the five ablation variants and tabulate their test metrics.
    Ablate(ConfigArgs),
    /// Compare analytic and finite-difference gradients on a random instance.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 5)]
        users: usize,
        #[arg(long, default_value_t = 5)]
        items: usize,
        #[arg(long, default_value_t = 8)]
        edges: usize,
    },
    /// Sweep each loss weight over the configured values.
    Sweep(ConfigArgs),
}

fn run(cli: Cli) -> bgcf::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let out = experiment::cmd_train(&cfg, &mut |r| eprintln!("{}", r.to_line()))?;
            println!(
                "best epoch {}: {}",
                out.checkpoint.epoch,
                out.checkpoint_path.display()
            );
        }
        Command::Evaluate {
            config,
            checkpoint,
            k,
        } => {
            let mut cfg = config.load()?;
            if let Some(k) = k {
                cfg.eval.k = vec![k];
            }
            for r in experiment::cmd_evaluate(&cfg, &checkpoint)? {
                println!("{}", r.to_line());
            }
        }
        Command::Recommend {
            checkpoint,
            k,
            workers,
            out,
        } => {
            let batch = experiment::cmd_recommend(&checkpoint, k, workers, &out)?;
            println!("{} users: {}", batch.rows.len(), out.display());
        }
        Command::Ablate(args) => {
            let cfg = args.load()?;
            let table = experiment::cmd_ablate(&cfg, &mut |v, rs| {
                for r in rs {
                    eprintln!("{v}: {}", r.to_line());
                }
            })?;
            print!("{}", table.to_text());
        }
        Command::Gradcheck {
            seed,
            layers,
            users,
            items,
            edges,
        } => {
            let spec = InstanceSpec {
                n_users: users,
                n_items: items,
                n_edges: edges,
                n_layers: layers,
                seed,
                ..InstanceSpec::default()
            };
            let report = experiment::cmd_gradcheck(spec, DEFAULT_STEP, DEFAULT_TOLERANCE)?;
            print!("{}", report.to_text());
            if !report.passed() {
                let names: Vec<&str> = report.failures().iter().map(|t| t.name.as_str()).collect();
                return Err(bgcf::Error::GradientMismatch(names.join(", ")));
            }
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            let curves = experiment::cmd_sweep(&cfg, &mut |l, x, r| {
                eprintln!("lambda{l} = {x}: {}", r.to_line())
            })?;
            for c in curves {
                println!("{}", cfg.output_dir.join(c.file_name()).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg);
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
