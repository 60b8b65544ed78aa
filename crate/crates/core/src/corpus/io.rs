use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_id, CorpusBundle, Task, TaskMeta, Vocabulary};
use crate::{Error, Result};

/// Where [`load_tasks`] gets its token index space from.
#[derive(Debug, Clone, Copy)]
pub enum VocabularySource<'a> {
    /// Build a vocabulary from the file, tokens in first-seen order.
    Build,
    /// Tokenize against a fixed vocabulary; unknown tokens are errors.
    Fixed(&'a Vocabulary),
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    query: Option<String>,
    answer: Option<String>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    query: String,
    answer: String,
}

/// Reads a line-delimited task file. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_tasks(path: &Path, source: VocabularySource<'_>) -> Result<(Vec<Task>, Vocabulary)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
        let query = raw
            .query
            .ok_or_else(|| malformed(lineno, "missing field \"query\"".into()))?;
        let answer = raw
            .answer
            .ok_or_else(|| malformed(lineno, "missing field \"answer\"".into()))?;
        if answer.split_whitespace().next().is_none() {
            return Err(malformed(lineno, "empty answer".into()));
        }
        let id = raw.id.unwrap_or_else(|| format!("line-{lineno}"));
        validate_id(&id).map_err(|e| malformed(lineno, e.to_string()))?;
        records.push((lineno, id, query, answer));
    }

    let vocab = match source {
        VocabularySource::Fixed(v) => v.clone(),
        VocabularySource::Build => Vocabulary::build(
            records
                .iter()
                .flat_map(|(_, _, q, a)| q.split_whitespace().chain(a.split_whitespace())),
        ),
    };

    let mut seen = HashSet::new();
    let mut tasks = Vec::with_capacity(records.len());
    for (lineno, id, query, answer) in records {
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let encode = |text: &str| {
            vocab.encode(text).map_err(|token| Error::UnknownToken {
                path: path.to_path_buf(),
                line: lineno,
                token,
            })
        };
        let query = encode(&query)?;
        let answer = encode(&answer)?;
        tasks.push(Task { id, query, answer });
    }
    Ok((tasks, vocab))
}

pub fn write_tasks(path: &Path, tasks: &[Task], vocab: &Vocabulary) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for task in tasks {
        let rec = OutRecord {
            id: &task.id,
            query: vocab.decode(&task.query),
            answer: vocab.decode(&task.answer),
        };
        let line = serde_json::to_string(&rec).expect("task record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const SPLITS: [&str; 4] = ["candidates", "anchors", "evals", "pretrain"];

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    id: String,
    #[serde(flatten)]
    meta: TaskMeta,
}

pub(super) fn save_bundle(bundle: &CorpusBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab_path = dir.join("vocab.txt");
    let mut vocab_text = bundle.vocabulary.tokens().join("\n");
    vocab_text.push('\n');
    fs::write(&vocab_path, vocab_text).map_err(|e| Error::io(&vocab_path, e))?;

    let splits = [
        &bundle.candidates,
        &bundle.anchors,
        &bundle.evals,
        &bundle.pretrain,
    ];
    for (name, tasks) in SPLITS.iter().zip(splits) {
        write_tasks(&dir.join(format!("{name}.jsonl")), tasks, &bundle.vocabulary)?;
    }

    let meta_path = dir.join("metadata.jsonl");
    let mut text = String::new();
    for (id, meta) in &bundle.metadata {
        let rec = MetaRecord {
            id: id.clone(),
            meta: meta.clone(),
        };
        text.push_str(&serde_json::to_string(&rec).expect("metadata serializes"));
        text.push('\n');
    }
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

pub(super) fn load_bundle(dir: &Path) -> Result<CorpusBundle> {
    let vocab_path = dir.join("vocab.txt");
    let text = fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
    let vocabulary = Vocabulary::from_tokens(text.lines().map(str::to_string).collect())?;

    let mut splits = Vec::with_capacity(4);
    for name in SPLITS {
        let path = dir.join(format!("{name}.jsonl"));
        let tasks = if path.exists() || name != "pretrain" {
            load_tasks(&path, VocabularySource::Fixed(&vocabulary))?.0
        } else {
            Vec::new()
        };
        splits.push(tasks);
    }

    let mut metadata = BTreeMap::new();
    let meta_path = dir.join("metadata.jsonl");
    if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: MetaRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: meta_path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            metadata.insert(rec.id, rec.meta);
        }
    }

    let mut it = splits.into_iter();
    let bundle = CorpusBundle {
        candidates: it.next().unwrap_or_default(),
        anchors: it.next().unwrap_or_default(),
        evals: it.next().unwrap_or_default(),
        pretrain: it.next().unwrap_or_default(),
        vocabulary,
        metadata,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let path = dir.path().join("tasks.jsonl");
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn single_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "{\"query\":\"a b\",\"answer\":\"c\"}\n");
        let (tasks, vocab) = load_tasks(&path, VocabularySource::Build).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].answer_len(), 1);
        assert_eq!(tasks[0].id, "line-1");
        assert_eq!(vocab.tokens(), &["<sep>", "a", "b", "c"]);
    }

    #[test]
    fn duplicate_ids_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "{\"id\":\"x\",\"query\":\"a\",\"answer\":\"b\"}\n{\"id\":\"x\",\"query\":\"b\",\"answer\":\"a\"}\n",
        );
        match load_tasks(&path, VocabularySource::Build) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "x"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "{\"query\":\"a\",\"answer\":\"b\"}\n{\"query\":\"a\"}\n");
        match load_tasks(&path, VocabularySource::Build) {
            Err(Error::Malformed { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("answer"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let path = write(&dir, "{\"query\":\"a\",\"answer\":\"  \"}\n");
        assert!(matches!(
            load_tasks(&path, VocabularySource::Build),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_token_under_fixed_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::build(["a", "b"]);
        let path = write(&dir, "{\"query\":\"a\",\"answer\":\"b\"}\n{\"query\":\"a q\",\"answer\":\"b\"}\n");
        match load_tasks(&path, VocabularySource::Fixed(&vocab)) {
            Err(Error::UnknownToken { line, token, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(token, "q");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
