//! Tasks, vocabularies and corpus bundles.
//!
//! Text is tokenized by splitting on whitespace over a closed vocabulary.
//! Index 0 of every vocabulary is the reserved separator token [`SEP`], which
//! opens every prompt and separates a demonstration from the scored task.

mod io;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};

pub use io::{load_tasks, write_tasks, VocabularySource};
pub use synthetic::{generate_synthetic_corpus, Family, GeneratorSpec};

use crate::{Error, Result};

/// The reserved separator token.
pub const SEP: &str = "<sep>";
/// Index of [`SEP`] in every vocabulary.
pub const SEP_ID: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in first-seen order. [`SEP`] is always
    /// placed at index 0 whether or not it occurs in the input.
    pub fn build<'a, I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut vocab = Vocabulary {
            tokens: vec![SEP.to_string()],
            index: HashMap::from([(SEP.to_string(), SEP_ID)]),
        };
        for tok in tokens {
            vocab.insert(tok);
        }
        vocab
    }

    /// Reconstructs a vocabulary from an explicit ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(SEP) {
            return Err(Error::Invalid(format!(
                "vocabulary must start with the separator {SEP}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!("invalid vocabulary token {tok:?}")));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        let vocab = Vocabulary { tokens, index };
        if vocab.size() < 2 {
            return Err(Error::Invalid("vocabulary needs at least 2 tokens".into()));
        }
        Ok(vocab)
    }

    fn insert(&mut self, tok: &str) -> usize {
        if let Some(&i) = self.index.get(tok) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), i);
        i
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Whitespace tokenization. Returns the first unknown token on failure.
    pub fn encode(&self, text: &str) -> std::result::Result<Vec<usize>, String> {
        text.split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| t.to_string()))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A (query, answer) pair. The unit of both training candidates and
/// anchor/evaluation tasks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Task {
    pub id: String,
    pub query: Vec<usize>,
    pub answer: Vec<usize>,
}

impl Task {
    pub fn new(id: impl Into<String>, query: Vec<usize>, answer: Vec<usize>) -> Result<Self> {
        let task = Task {
            id: id.into(),
            query,
            answer,
        };
        if task.answer.is_empty() {
            return Err(Error::Invalid(format!("task {} has an empty answer", task.id)));
        }
        validate_id(&task.id)?;
        Ok(task)
    }

    pub fn answer_len(&self) -> usize {
        self.answer.len()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.answer.is_empty() {
            return Err(Error::Invalid(format!("task {} has an empty answer", self.id)));
        }
        for &t in self.query.iter().chain(&self.answer) {
            if t >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab_size,
                });
            }
        }
        Ok(())
    }
}

/// Ids travel through CSV tables and file names.
pub(crate) fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '"', '\n', '\r', '/']) {
        return Err(Error::Invalid(format!("unsupported task id {id:?}")));
    }
    Ok(())
}

/// Diagnostic metadata attached to generated tasks. Never read by scorers.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TaskMeta {
    pub rule: String,
    pub corrupted: bool,
}

/// Candidate pool, anchor set, evaluation set and the pretraining split used
/// to produce the base model, sharing one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBundle {
    pub candidates: Vec<Task>,
    pub anchors: Vec<Task>,
    pub evals: Vec<Task>,
    pub pretrain: Vec<Task>,
    pub vocabulary: Vocabulary,
    pub metadata: BTreeMap<String, TaskMeta>,
}

impl CorpusBundle {
    /// Checks id disjointness across splits and token ranges.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for task in self.all_tasks() {
            task.validate(self.vocabulary.size())?;
            if !seen.insert(task.id.as_str()) {
                return Err(Error::DuplicateId(task.id.clone()));
            }
        }
        Ok(())
    }

    pub fn all_tasks(&self) -> impl Iterator<Item = &Task> {
        self.candidates
            .iter()
            .chain(&self.anchors)
            .chain(&self.evals)
            .chain(&self.pretrain)
    }

    pub fn is_corrupted(&self, id: &str) -> bool {
        self.metadata.get(id).is_some_and(|m| m.corrupted)
    }

    /// Longest one-shot prompt over every (candidate, anchor-or-eval) pair:
    /// `1 + |z| + 1 + |x|`.
    pub fn max_one_shot_len(&self) -> usize {
        let longest = |ts: &[Task]| ts.iter().map(|t| t.query.len() + t.answer.len()).max().unwrap_or(0);
        let z = longest(&self.candidates);
        let x = longest(&self.anchors).max(longest(&self.evals));
        let pre = self
            .pretrain
            .iter()
            .map(|t| 1 + t.query.len() + t.answer.len())
            .max()
            .unwrap_or(0);
        (2 + z + x).max(pre)
    }

    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        io::save_bundle(self, dir)
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        io::load_bundle(dir)
    }
}
