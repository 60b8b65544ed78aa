//! End-to-end experiment commands.
//!
//! Each command reads only what earlier commands wrote under the output
//! directory: `config.txt`, `corpus/`, `checkpoints/`, `scores/`, `reports/`,
//! `subsets/` and `evals/`.

mod commands;
mod config;
mod eval;
mod verify;

use std::path::{Path, PathBuf};

pub use commands::{
    cmd_compare, cmd_finetune, cmd_score, cmd_select, cmd_train, load_bundle, read_subset, ColumnRef, FinetuneReport, Selection, TrainReport,
};
pub use config::{ExperimentConfig, HessianExamples};
pub use eval::{cmd_eval, evaluate, EvalResult, EvalTask};
pub use verify::{cmd_verify, cmd_verify_with, CheckResult, VerifyOptions, VerifyReport};

use crate::{Error, Result};

/// Paths inside an experiment's output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputLayout {
    root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        OutputLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_copy(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn base_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("base.ckpt")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores")
    }

    pub fn score_table(&self) -> PathBuf {
        self.scores().join("scores.csv")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn subsets(&self) -> PathBuf {
        self.root.join("subsets")
    }

    pub fn evals(&self) -> PathBuf {
        self.root.join("evals")
    }

    pub fn create(&self) -> Result<()> {
        for dir in [self.checkpoints(), self.scores(), self.reports(), self.subsets(), self.evals()] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs `f` on a rayon pool with `workers` threads (0 = all cores).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}
