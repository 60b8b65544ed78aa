use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusBundle, Task, TaskMeta, Vocabulary, SEP_ID};
use crate::{Error, Result};

/// Instruction tokens and the answer each produces from the query items.
const RULES: [&str; 4] = ["copy", "rev", "succ", "pred"];
/// First answer token. Candidate, anchor and eval answers always open with
/// the first marker; pretraining answers use either.
pub const ANSWER_MARKERS: [&str; 2] = ["=>", "->"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Pattern-completion tasks `rule s1 .. sk` answered by a format marker
    /// and the transformed items. Pretraining mixes two markers, so a
    /// demonstration shows which one the pool uses.
    TemplateInstruction,
    /// Same tasks, with a fraction of candidates whose answers are shuffled.
    MixedQuality,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::TemplateInstruction => "template-instruction",
            Family::MixedQuality => "mixed-quality",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "template-instruction" => Ok(Family::TemplateInstruction),
            "mixed-quality" => Ok(Family::MixedQuality),
            other => Err(Error::Config(format!("unknown corpus family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub family: Family,
    pub candidates: usize,
    pub anchors: usize,
    pub evals: usize,
    /// Base tasks in the pretraining split.
    pub pretrain: usize,
    /// Fraction of pretraining tasks that are also emitted with a same-marker
    /// demonstration prepended to the query.
    pub demo_fraction: f64,
    /// Fraction of pretraining base tasks answered with the alternative
    /// marker.
    pub alt_marker_fraction: f64,
    /// Fraction of candidates corrupted under [`Family::MixedQuality`].
    pub corruption_fraction: f64,
    /// Number of item symbols.
    pub symbols: usize,
    /// Items per query (and answer length).
    pub item_len: usize,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            family: Family::TemplateInstruction,
            candidates: 500,
            anchors: 32,
            evals: 64,
            pretrain: 400,
            demo_fraction: 0.5,
            alt_marker_fraction: 0.5,
            corruption_fraction: 0.3,
            symbols: 8,
            item_len: 3,
            seed: 7,
        }
    }
}

impl GeneratorSpec {
    /// Number of distinct tasks the template space can produce.
    pub fn task_space(&self) -> usize {
        (self.symbols as u128)
            .checked_pow(self.item_len as u32)
            .and_then(|n| n.checked_mul(RULES.len() as u128))
            .map_or(usize::MAX, |n| n.min(usize::MAX as u128) as usize)
    }

    fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("candidate", self.candidates),
            ("anchor", self.anchors),
            ("eval", self.evals),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("empty {name} pool")));
            }
        }
        if self.symbols < 2 || self.item_len == 0 {
            return Err(Error::Config("need at least 2 symbols and 1 item".into()));
        }
        for (name, f) in [
            ("demo_fraction", self.demo_fraction),
            ("alt_marker_fraction", self.alt_marker_fraction),
            ("corruption_fraction", self.corruption_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        let total = self.candidates + self.anchors + self.evals + self.pretrain;
        if total > self.task_space() {
            return Err(Error::Config(format!(
                "requested {total} distinct tasks but the template space holds {}",
                self.task_space()
            )));
        }
        Ok(())
    }
}

fn symbol_name(i: usize) -> String {
    let letters = b"abcdefghijklmnopqrstuvwxyz";
    if i < letters.len() {
        (letters[i] as char).to_string()
    } else {
        format!("s{i}")
    }
}

struct Template {
    rule: usize,
    items: Vec<usize>,
}

impl Template {
    /// Answer as symbol indices.
    fn answer(&self, symbols: usize) -> Vec<usize> {
        let items = &self.items;
        match RULES[self.rule] {
            "copy" => items.clone(),
            "rev" => items.iter().rev().copied().collect(),
            "succ" => items.iter().map(|&s| (s + 1) % symbols).collect(),
            "pred" => items.iter().map(|&s| (s + symbols - 1) % symbols).collect(),
            _ => unreachable!(),
        }
    }
}

/// Deterministic synthetic bundle. Task ids are `<family>-<seed>-<ordinal>`
/// with the ordinal zero-padded to five digits and unique across splits.
pub fn generate_synthetic_corpus(spec: &GeneratorSpec) -> Result<CorpusBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let symbol_names: Vec<String> = (0..spec.symbols).map(symbol_name).collect();
    let vocabulary = Vocabulary::build(
        RULES
            .iter()
            .chain(&ANSWER_MARKERS)
            .copied()
            .chain(symbol_names.iter().map(String::as_str)),
    );
    let marker_id = |m: usize| vocabulary.id(ANSWER_MARKERS[m]).expect("marker token");
    let rule_id = |r: usize| vocabulary.id(RULES[r]).expect("rule token");
    let sym_id = |s: usize| vocabulary.id(&symbol_names[s]).expect("symbol token");

    let total = spec.candidates + spec.anchors + spec.evals + spec.pretrain;
    let mut seen = HashSet::with_capacity(total);
    let mut templates = Vec::with_capacity(total);
    while templates.len() < total {
        let rule = rng.gen_range(0..RULES.len());
        let items: Vec<usize> = (0..spec.item_len).map(|_| rng.gen_range(0..spec.symbols)).collect();
        if seen.insert((rule, items.clone())) {
            templates.push(Template { rule, items });
        }
    }

    let prefix = format!("{}-{}", spec.family, spec.seed);
    let mut metadata = BTreeMap::new();
    let mut tasks: Vec<Task> = Vec::with_capacity(total);
    for (ordinal, t) in templates.iter().enumerate() {
        let id = format!("{prefix}-{ordinal:05}");
        let mut query = vec![rule_id(t.rule)];
        query.extend(t.items.iter().map(|&s| sym_id(s)));
        let mut answer = vec![marker_id(0)];
        answer.extend(t.answer(spec.symbols).into_iter().map(sym_id));
        metadata.insert(
            id.clone(),
            TaskMeta {
                rule: RULES[t.rule].to_string(),
                corrupted: false,
            },
        );
        tasks.push(Task { id, query, answer });
    }

    let mut rest = tasks.split_off(spec.candidates);
    let mut candidates = tasks;
    let mut after_anchors = rest.split_off(spec.anchors);
    let anchors = rest;
    let mut pretrain_base = after_anchors.split_off(spec.evals);
    let evals = after_anchors;

    if spec.family == Family::MixedQuality {
        let n_corrupt = (spec.corruption_fraction * spec.candidates as f64).round() as usize;
        let mut picked = index::sample(&mut rng, spec.candidates, n_corrupt).into_vec();
        picked.sort_unstable();
        for i in picked {
            let task = &mut candidates[i];
            task.answer.shuffle(&mut rng);
            if let Some(meta) = metadata.get_mut(&task.id) {
                meta.corrupted = true;
            }
        }
    }

    let n_alt = (spec.alt_marker_fraction * pretrain_base.len() as f64).round() as usize;
    for i in index::sample(&mut rng, pretrain_base.len(), n_alt) {
        pretrain_base[i].answer[0] = marker_id(1);
    }

    let mut pretrain = pretrain_base.clone();
    let n_demo = (spec.demo_fraction * pretrain_base.len() as f64).round() as usize;
    let mut picked = index::sample(&mut rng, pretrain_base.len(), n_demo).into_vec();
    picked.sort_unstable();
    for i in picked {
        let target = &pretrain_base[i];
        let same_marker: Vec<&Task> = pretrain_base
            .iter()
            .filter(|t| t.id != target.id && t.answer[0] == target.answer[0])
            .collect();
        let Some(demo) = same_marker.choose(&mut rng) else {
            continue;
        };
        let mut query = demo.query.clone();
        query.extend(&demo.answer);
        query.push(SEP_ID);
        query.extend(&target.query);
        pretrain.push(Task {
            id: format!("{}-demo", target.id),
            query,
            answer: target.answer.clone(),
        });
    }

    let bundle = CorpusBundle {
        candidates,
        anchors,
        evals,
        pretrain,
        vocabulary,
        metadata,
    };
    bundle.validate()?;
    Ok(bundle)
}
