//! Command-line driver: reads an experiment config, runs one task and
//! writes `report.json` plus `series.csv` into the output directory.

// `!(x > 0.0)` guards reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod expr;
pub mod tasks;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub use config::{ExperimentConfig, LoadedConfig, TaskKind};

/// Identifier written into every report; bump on incompatible changes.
pub const REPORT_SCHEMA: &str = "levylab-report/1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}", config_message(path, *line, msg))]
    Config { path: PathBuf, line: Option<usize>, msg: String },
    #[error(transparent)]
    Core(#[from] levylab_core::Error),
    #[error("{0}")]
    Io(String),
}

fn config_message(path: &Path, line: Option<usize>, msg: &str) -> String {
    match line {
        Some(l) => format!("{}:{l}: {msg}", path.display()),
        None => format!("{}: {msg}", path.display()),
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Top-level layout of `report.json`. Only `generated_unix` varies between
/// runs of the same config and seed.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub task: &'static str,
    pub pass: bool,
    pub seed: u64,
    pub config: Option<ExperimentConfig>,
    pub result: serde_json::Value,
    pub generated_unix: u64,
}

/// Columns of `series.csv`.
#[derive(Debug, Clone, Default)]
pub struct Series {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// What a task hands back before anything is written.
#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub pass: bool,
    pub result: serde_json::Value,
    pub series: Series,
    /// Printed on standard output (the `solve` summary).
    pub stdout: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub pass: bool,
    pub report_path: PathBuf,
    pub stdout: Option<String>,
}

/// Validates the config, runs `task` and writes the report files. A failed
/// verification still writes its report and returns `pass = false`.
pub fn run(task: TaskKind, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let loaded = match &opts.config {
        Some(p) => Some(LoadedConfig::from_path(p)?),
        None if task == TaskKind::Selftest => None,
        None => {
            return Err(CliError::Config {
                path: PathBuf::from("<command line>"),
                line: None,
                msg: format!("`{}` needs --config", task.name()),
            })
        }
    };
    if let Some(lc) = &loaded {
        if let Some(k) = lc.config.task.kind {
            if k != task {
                return Err(lc.invalid("task", "kind", format!("config is for `{}`, not `{}`", k.name(), task.name())));
            }
        }
    }
    let seed = opts
        .seed
        .or_else(|| loaded.as_ref().and_then(|l| l.config.task.seed))
        .unwrap_or(0);
    let out_dir = match (&opts.out, &loaded) {
        (Some(o), _) => o.clone(),
        (None, Some(lc)) => lc.resolve(&lc.config.output.dir),
        (None, None) => PathBuf::from("out"),
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;

    let output = match &loaded {
        None => tasks::selftest()?,
        Some(lc) => {
            let setup = lc.setup()?;
            match task {
                TaskKind::Solve => tasks::solve(lc, &setup, &out_dir)?,
                TaskKind::VerifyBarrier => tasks::verify_barrier(lc, &setup)?,
                TaskKind::Abp => tasks::abp(lc, &setup, seed)?,
                TaskKind::Harnack => tasks::harnack(lc, &setup)?,
                TaskKind::Holder => tasks::holder(lc, &setup)?,
                TaskKind::Envelope => tasks::envelope(lc, &setup)?,
                TaskKind::Selftest => tasks::selftest()?,
            }
        }
    };

    let report = Report {
        schema: REPORT_SCHEMA,
        task: task.name(),
        pass: output.pass,
        seed,
        config: loaded.map(|l| l.config),
        result: output.result,
        generated_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    let report_path = out_dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(&report_path, text + "\n")?;
    output.series.write(&out_dir.join("series.csv"))?;
    Ok(RunOutcome {
        pass: output.pass,
        report_path,
        stdout: output.stdout,
    })
}
