use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use super::{with_workers, write_file, ExperimentConfig, HessianExamples, OutputLayout};
use crate::analysis::{bin_scores, count_matched, pair_by_id, rank_report, RankReport, ScoreBins};
use crate::corpus::{generate_synthetic_corpus, CorpusBundle, Task};
use crate::tinylm::{checkpoint_id, init_model_with_scale, load_checkpoint, save_checkpoint, train, write_trajectory, TinyModel};
use crate::valuation::{score_candidates, AnchorSet, DampedHessian, Method, ScoreOptions, ScoreTable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub checkpoint_id: String,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// The bundle written by [`cmd_train`].
pub fn load_bundle(layout: &OutputLayout) -> Result<CorpusBundle> {
    let dir = layout.corpus();
    if !dir.is_dir() {
        return Err(Error::Config(format!("no corpus at {}; run train first", dir.display())));
    }
    CorpusBundle::load(&dir)
}

fn load_base(layout: &OutputLayout) -> Result<(TinyModel, String)> {
    let path = layout.base_checkpoint();
    if !path.is_file() {
        return Err(Error::Config(format!("no base checkpoint at {}; run train first", path.display())));
    }
    Ok((load_checkpoint(&path)?, checkpoint_id(&path)?))
}

pub(crate) fn source_bundle(cfg: &ExperimentConfig) -> Result<CorpusBundle> {
    let bundle = match &cfg.corpus_dir {
        Some(dir) => CorpusBundle::load(dir)?,
        None => generate_synthetic_corpus(&cfg.generator_spec())?,
    };
    bundle.validate()?;
    let need = bundle.max_one_shot_len();
    if need > cfg.context_cap {
        return Err(Error::Config(format!(
            "context_cap {} is shorter than the longest one-shot prompt ({need} tokens)",
            cfg.context_cap
        )));
    }
    Ok(bundle)
}

pub(crate) fn train_base(cfg: &ExperimentConfig, bundle: &CorpusBundle) -> Result<crate::tinylm::TrainOutcome> {
    let model = init_model_with_scale(cfg.model_config(bundle.vocabulary.size()), cfg.seed, cfg.init_scale)?;
    train(&model, &bundle.pretrain, &cfg.train_hyper())
}

/// Builds (or loads) the bundle, trains the base model on its pretraining
/// split and writes `checkpoints/base.ckpt` and `reports/train_loss.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let layout = OutputLayout::new(&cfg.out);
    layout.create()?;
    write_file(&layout.config_copy(), &cfg.to_text())?;
    let bundle = source_bundle(cfg)?;
    bundle.save(&layout.corpus())?;

    let outcome = with_workers(cfg.workers, || train_base(cfg, &bundle))?;
    let checkpoint = layout.base_checkpoint();
    save_checkpoint(&outcome.model, &checkpoint)?;
    write_trajectory(&layout.reports().join("train_loss.csv"), &outcome.trajectory)?;
    let loss = |i: usize| outcome.trajectory[i].mean_loss;
    Ok(TrainReport {
        checkpoint_id: checkpoint_id(&checkpoint)?,
        checkpoint,
        initial_loss: loss(0),
        final_loss: loss(outcome.trajectory.len() - 1),
    })
}

/// Scores every candidate against the anchor set with the base checkpoint and
/// writes `scores/scores.csv`.
pub fn cmd_score(cfg: &ExperimentConfig, methods: &BTreeSet<Method>) -> Result<ScoreTable> {
    if methods.is_empty() {
        return Err(Error::Config("no scoring methods requested".into()));
    }
    let layout = OutputLayout::new(&cfg.out);
    let bundle = load_bundle(&layout)?;
    let (model, id) = load_base(&layout)?;
    if bundle.anchors.is_empty() {
        return Err(Error::Invalid("anchor set is empty".into()));
    }
    let table = with_workers(cfg.workers, || {
        let hessian = if methods.contains(&Method::InflHessian) {
            let examples = match cfg.hessian_examples {
                HessianExamples::Candidates => &bundle.candidates,
                HessianExamples::Pretrain => &bundle.pretrain,
                HessianExamples::Anchors => &bundle.anchors,
            };
            Some(DampedHessian::build_relative(&model, examples, cfg.damping)?)
        } else {
            None
        };
        let anchors = AnchorSet::prepare(&model, &bundle.anchors, hessian.as_ref())?;
        let opts = ScoreOptions {
            methods: methods.clone(),
            eta: cfg.score_eta,
            checkpoint_id: id.clone(),
        };
        score_candidates(&model, &bundle.candidates, &anchors, &opts)
    })?;
    layout.create()?;
    table.write_csv(&layout.score_table())?;
    Ok(table)
}

/// One method column of one score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRef {
    pub table: PathBuf,
    pub method: Method,
}

impl ColumnRef {
    fn load(&self) -> Result<Vec<(String, f64)>> {
        ScoreTable::read_csv(&self.table)?.column(self.method)
    }

    fn label(&self, qualify: bool) -> String {
        let stem = self.table.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if qualify {
            format!("{stem}.{}", self.method)
        } else {
            self.method.to_string()
        }
    }
}

/// Compares two score columns and writes `reports/<a>_vs_<b>.{txt,svg}`
/// with the overlap curve and bin overlap as CSV.
pub fn cmd_compare(cfg: &ExperimentConfig, a: &ColumnRef, b: &ColumnRef) -> Result<RankReport> {
    let (ids, va, vb) = pair_by_id(&a.load()?, &b.load()?)?;
    let qualify = a.table != b.table;
    let (la, lb) = (a.label(qualify), b.label(qualify));
    let report = rank_report(&la, &lb, &ids, &va, &vb, &cfg.bin_thresholds)?;
    let layout = OutputLayout::new(&cfg.out);
    let stem = layout.reports().join(format!("{la}_vs_{lb}"));
    let with = |ext: &str| PathBuf::from(format!("{}{ext}", stem.display()));
    write_file(&with(".txt"), &report.summary())?;
    write_file(&with(".overlap.csv"), &report.overlap_csv())?;
    write_file(&with(".bins.csv"), &report.bins_csv())?;
    write_file(&with(".svg"), &report.scatter_svg())?;
    Ok(report)
}

/// Bins of the selection method and the count-matched lists of every other
/// method column in the table.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub method: Method,
    pub bins: ScoreBins,
    pub matched: Vec<(Method, ScoreBins)>,
    pub warnings: Vec<String>,
}

fn subset_text(ids: &[String]) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

/// Writes `subsets/<method>/<bin>.txt` for the selection method and
/// `subsets/<method>/<other>/<bin>.txt` for each count-matched column.
/// Empty bins produce empty files and a warning.
pub fn cmd_select(cfg: &ExperimentConfig, table: &Path, method: Method) -> Result<Selection> {
    let scores = ScoreTable::read_csv(table)?;
    let column = scores.column(method)?;
    let ids: Vec<String> = column.iter().map(|(id, _)| id.clone()).collect();
    let values: Vec<f64> = column.iter().map(|(_, v)| *v).collect();
    let bins = bin_scores(&ids, &values, &cfg.bin_thresholds)?;

    let mut matched = Vec::new();
    for other in scores.methods() {
        if other == method {
            continue;
        }
        let col = scores.column(other)?;
        let (paired, _, vo) = pair_by_id(&column, &col)?;
        debug_assert_eq!(paired, ids);
        matched.push((other, count_matched(&bins, &ids, &vo)?));
    }

    let layout = OutputLayout::new(&cfg.out);
    let dir = layout.subsets().join(method.to_string());
    let mut warnings = Vec::new();
    for bin in &bins.bins {
        if bin.is_empty() {
            warnings.push(format!("{method} bin {} is empty", bin.label()));
        }
        write_file(&dir.join(format!("{}.txt", bin.label())), &subset_text(&bin.ids))?;
    }
    for (other, m) in &matched {
        for bin in &m.bins {
            write_file(&dir.join(other.to_string()).join(format!("{}.txt", bin.label())), &subset_text(&bin.ids))?;
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Selection {
        method,
        bins,
        matched,
        warnings,
    })
}

/// Candidate ids listed one per line.
pub fn read_subset(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub name: String,
    pub checkpoint: PathBuf,
    pub base_checkpoint_id: String,
    pub examples: usize,
    pub final_loss: f64,
}

/// `subsets/icp/gt0.8.txt` becomes `icp.gt0.8`.
fn subset_name(layout: &OutputLayout, subset: &Path) -> String {
    let rel = subset.strip_prefix(layout.subsets()).unwrap_or(subset);
    let rel = rel.with_extension("");
    let parts: Vec<String> = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    if subset.starts_with(layout.subsets()) {
        parts.join(".")
    } else {
        parts.last().cloned().unwrap_or_default()
    }
}

/// Fine-tunes the base checkpoint on the candidates listed in `subset` and
/// writes `checkpoints/ft.<name>.ckpt`.
pub fn cmd_finetune(cfg: &ExperimentConfig, subset: &Path, name: Option<&str>) -> Result<FinetuneReport> {
    let layout = OutputLayout::new(&cfg.out);
    let ids = read_subset(subset)?;
    if ids.is_empty() {
        return Err(Error::Invalid(format!("subset {} is empty", subset.display())));
    }
    let bundle = load_bundle(&layout)?;
    let (base, base_id) = load_base(&layout)?;
    let by_id: HashMap<&str, &Task> = bundle.candidates.iter().map(|t| (t.id.as_str(), t)).collect();
    let tasks = ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|t| (*t).clone())
                .ok_or_else(|| Error::Invalid(format!("subset id {id:?} is not a candidate")))
        })
        .collect::<Result<Vec<_>>>()?;

    let outcome = with_workers(cfg.workers, || train(&base, &tasks, &cfg.finetune_hyper()))?;
    let name = name.map(String::from).unwrap_or_else(|| subset_name(&layout, subset));
    layout.create()?;
    let checkpoint = layout.checkpoints().join(format!("ft.{name}.ckpt"));
    save_checkpoint(&outcome.model, &checkpoint)?;
    write_trajectory(&layout.reports().join(format!("finetune.{name}.loss.csv")), &outcome.trajectory)?;
    Ok(FinetuneReport {
        name,
        checkpoint,
        base_checkpoint_id: base_id,
        examples: tasks.len(),
        final_loss: outcome.trajectory.last().map_or(f64::NAN, |p| p.mean_loss),
    })
}
