use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icp_lab::pipeline::{
    cmd_compare, cmd_eval, cmd_finetune, cmd_score, cmd_select, cmd_train, cmd_verify, ColumnRef, ExperimentConfig, OutputLayout,
};
use icp_lab::valuation::Method;

#[derive(Parser, Debug)]
#[command(name = "icp-lab", version, about = "In-context probing vs gradient influence on a tiny language model")]
struct Cli {
    /// Flat `key = value` experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the corpus and train the base model.
    Train,
    /// Score every candidate.
    Score {
        /// Comma-separated methods; defaults to the config's `methods`.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
    },
    /// Compare two score columns.
    Compare {
        #[arg(long)]
        a: Method,
        #[arg(long)]
        b: Method,
        /// Table holding column `a` (default: scores/scores.csv).
        #[arg(long)]
        table_a: Option<PathBuf>,
        #[arg(long)]
        table_b: Option<PathBuf>,
    },
    /// Write per-bin subsets for one method plus count-matched lists.
    Select {
        /// Defaults to the config's `select_method`.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Fine-tune the base model on a subset file.
    Finetune {
        #[arg(long)]
        subset: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Win fraction of a fine-tuned checkpoint against the base model.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the numerical verification suite.
    Verify,
}

enum Failure {
    Validation(icp_lab::Error),
    Verification,
}

impl From<icp_lab::Error> for Failure {
    fn from(e: icp_lab::Error) -> Self {
        Failure::Validation(e)
    }
}

fn load_config(cli: &Cli) -> icp_lab::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let layout = OutputLayout::new(&cfg.out);
    match &cli.command {
        Command::Train => {
            let r = cmd_train(&cfg)?;
            println!(
                "trained {} (id {}): mean loss {:.6} -> {:.6}",
                r.checkpoint.display(),
                r.checkpoint_id,
                r.initial_loss,
                r.final_loss
            );
        }
        Command::Score { methods } => {
            let methods: BTreeSet<Method> = if methods.is_empty() {
                cfg.methods.clone()
            } else {
                methods.iter().copied().collect()
            };
            let table = cmd_score(&cfg, &methods)?;
            println!("scored {} candidates -> {}", table.len(), layout.score_table().display());
        }
        Command::Compare { a, b, table_a, table_b } => {
            let default = layout.score_table();
            let a = ColumnRef {
                table: table_a.clone().unwrap_or_else(|| default.clone()),
                method: *a,
            };
            let b = ColumnRef {
                table: table_b.clone().unwrap_or(default),
                method: *b,
            };
            print!("{}", cmd_compare(&cfg, &a, &b)?.summary());
        }
        Command::Select { method, table } => {
            let method = method.unwrap_or(cfg.select_method);
            let table = table.clone().unwrap_or_else(|| layout.score_table());
            let sel = cmd_select(&cfg, &table, method)?;
            for bin in &sel.bins.bins {
                println!("{method} {}: {}", bin.label(), bin.len());
            }
        }
        Command::Finetune { subset, name } => {
            let r = cmd_finetune(&cfg, subset, name.as_deref())?;
            println!(
                "fine-tuned base {} on {} examples -> {} (final loss {:.6})",
                r.base_checkpoint_id,
                r.examples,
                r.checkpoint.display(),
                r.final_loss
            );
        }
        Command::Eval { checkpoint } => {
            let r = cmd_eval(&cfg, checkpoint)?;
            println!(
                "{}: win fraction {:.4} ({} of {}), mean delta {:.6e}",
                checkpoint.display(),
                r.win_fraction,
                r.wins(),
                r.tasks.len(),
                r.mean_delta
            );
        }
        Command::Verify => {
            let report = cmd_verify(&cfg)?;
            print!("{}", report.to_text());
            if !report.passed() {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(2)
        }
    }
}
