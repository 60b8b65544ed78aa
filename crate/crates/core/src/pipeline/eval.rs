use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::commands::load_bundle;
use super::{with_workers, write_file, ExperimentConfig, OutputLayout};
use crate::corpus::Task;
use crate::tinylm::{checkpoint_id, load_checkpoint, TinyModel};
use crate::valuation::score_zero_shot;
use crate::{fmt_float, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTask {
    pub id: String,
    pub baseline: f64,
    pub finetuned: f64,
    /// Strict: ties count as losses.
    pub win: bool,
}

/// Zero-shot win record of a fine-tuned model against its base model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub checkpoint_id: String,
    pub base_checkpoint_id: String,
    /// Sorted by id.
    pub tasks: Vec<EvalTask>,
    pub win_fraction: f64,
    pub mean_delta: f64,
}

impl EvalResult {
    pub fn wins(&self) -> usize {
        self.tasks.iter().filter(|t| t.win).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,baseline,finetuned,win\n");
        for t in &self.tasks {
            s.push_str(&format!("{},{},{},{}\n", t.id, fmt_float(t.baseline), fmt_float(t.finetuned), u8::from(t.win)));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "checkpoint_id,base_checkpoint_id,tasks,wins,win_fraction,mean_delta\n{},{},{},{},{},{}\n",
            self.checkpoint_id,
            self.base_checkpoint_id,
            self.tasks.len(),
            self.wins(),
            fmt_float(self.win_fraction),
            fmt_float(self.mean_delta)
        )
    }
}

/// Compares zero-shot scores of `tuned` and `base` on every eval task.
pub fn evaluate(base: &TinyModel, tuned: &TinyModel, evals: &[Task]) -> Result<EvalResult> {
    if evals.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    if base.config() != tuned.config() {
        return Err(Error::Config(format!(
            "checkpoint configs differ: base {:?}, fine-tuned {:?}",
            base.config(),
            tuned.config()
        )));
    }
    let mut tasks = evals
        .par_iter()
        .map(|x| {
            let baseline = score_zero_shot(base, x)?;
            let finetuned = score_zero_shot(tuned, x)?;
            Ok(EvalTask {
                id: x.id.clone(),
                baseline,
                finetuned,
                win: finetuned > baseline,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    let n = tasks.len() as f64;
    let win_fraction = tasks.iter().filter(|t| t.win).count() as f64 / n;
    let mean_delta = tasks.iter().map(|t| t.finetuned - t.baseline).sum::<f64>() / n;
    Ok(EvalResult {
        checkpoint_id: String::new(),
        base_checkpoint_id: String::new(),
        tasks,
        win_fraction,
        mean_delta,
    })
}

fn eval_stem(checkpoint: &Path) -> String {
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.strip_prefix("ft.").map(String::from).unwrap_or(stem)
}

/// Evaluates `checkpoint` against the base checkpoint on the eval split and
/// writes `evals/<name>.csv` and `evals/<name>.summary.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalResult> {
    let layout = OutputLayout::new(&cfg.out);
    let bundle = load_bundle(&layout)?;
    let base_path = layout.base_checkpoint();
    let base = load_checkpoint(&base_path)?;
    let tuned = load_checkpoint(checkpoint)?;
    let mut result = with_workers(cfg.workers, || evaluate(&base, &tuned, &bundle.evals))?;
    result.checkpoint_id = checkpoint_id(checkpoint)?;
    result.base_checkpoint_id = checkpoint_id(&base_path)?;
    let stem = eval_stem(checkpoint);
    let dir: PathBuf = layout.evals();
    write_file(&dir.join(format!("{stem}.csv")), &result.to_csv())?;
    write_file(&dir.join(format!("{stem}.summary.csv")), &result.summary_csv())?;
    Ok(result)
}
