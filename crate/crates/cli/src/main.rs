use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use levylab_cli::{run, RunOptions, TaskKind};

#[derive(Parser)]
#[command(name = "levylab", version, about = "Experiments for nonlocal Isaacs equations")]
struct Cli {
    #[command(subcommand)]
    task: Task,
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized batches (overrides `task.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Task {
    /// Solve the configured Dirichlet problem.
    Solve,
    /// Check a barrier inequality pointwise.
    VerifyBarrier,
    /// Seeded batch of ABP checks.
    Abp,
    /// Weak Harnack ratios for the computed solution.
    Harnack,
    /// Oscillation decay and Holder fit.
    Holder,
    /// Convex envelope and contact set.
    Envelope,
    /// Built-in checks with closed-form answers.
    Selftest,
}

impl From<Task> for TaskKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Solve => TaskKind::Solve,
            Task::VerifyBarrier => TaskKind::VerifyBarrier,
            Task::Abp => TaskKind::Abp,
            Task::Harnack => TaskKind::Harnack,
            Task::Holder => TaskKind::Holder,
            Task::Envelope => TaskKind::Envelope,
            Task::Selftest => TaskKind::Selftest,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let opts = RunOptions {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
    };
    match run(cli.task.into(), &opts) {
        Ok(outcome) => {
            if let Some(s) = outcome.stdout {
                println!("{s}");
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("verification failed; report at {}", outcome.report_path.display());
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
