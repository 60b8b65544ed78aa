use std::fmt;

use super::{bottom_k, top_k};
use crate::{Error, Result};

/// Bin edges: one `<= t0` bin, then one `> t` bin per threshold.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.5, 0.8, 0.85, 0.9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinKind {
    AtMost(f64),
    Above(f64),
}

impl fmt::Display for BinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinKind::AtMost(t) => write!(f, "le{t}"),
            BinKind::Above(t) => write!(f, "gt{t}"),
        }
    }
}

impl BinKind {
    pub fn contains(self, score: f64) -> bool {
        match self {
            BinKind::AtMost(t) => score <= t,
            BinKind::Above(t) => score > t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub kind: BinKind,
    /// Sorted ascending.
    pub ids: Vec<String>,
}

impl Bin {
    pub fn label(&self) -> String {
        self.kind.to_string()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Overlapping threshold bins: every `> t` bin holds all candidates strictly
/// above `t`, so higher bins are subsets of lower ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBins {
    pub thresholds: Vec<f64>,
    pub bins: Vec<Bin>,
}

impl ScoreBins {
    pub fn counts(&self) -> Vec<usize> {
        self.bins.iter().map(Bin::len).collect()
    }

    pub fn get(&self, kind: BinKind) -> Option<&Bin> {
        self.bins.iter().find(|b| b.kind == kind)
    }

    /// Highest non-empty `>` bin.
    pub fn top(&self) -> Option<&Bin> {
        self.bins
            .iter()
            .rev()
            .find(|b| matches!(b.kind, BinKind::Above(_)) && !b.is_empty())
    }

    pub fn bottom(&self) -> &Bin {
        &self.bins[0]
    }
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::Config("at least one bin threshold is required".into()));
    }
    if thresholds.iter().any(|t| !t.is_finite()) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("bin thresholds must be finite and strictly increasing, got {thresholds:?}")));
    }
    Ok(())
}

fn kinds(thresholds: &[f64]) -> Vec<BinKind> {
    std::iter::once(BinKind::AtMost(thresholds[0]))
        .chain(thresholds.iter().map(|&t| BinKind::Above(t)))
        .collect()
}

fn sorted(mut ids: Vec<String>) -> Vec<String> {
    ids.sort();
    ids
}

pub fn bin_scores(ids: &[String], scores: &[f64], thresholds: &[f64]) -> Result<ScoreBins> {
    if scores.is_empty() {
        return Err(Error::Invalid("cannot bin an empty score list".into()));
    }
    if ids.len() != scores.len() {
        return Err(Error::LengthMismatch { expected: ids.len(), actual: scores.len() });
    }
    check_thresholds(thresholds)?;
    let bins = kinds(thresholds)
        .into_iter()
        .map(|kind| Bin {
            kind,
            ids: sorted(
                ids.iter()
                    .zip(scores)
                    .filter(|(_, &s)| kind.contains(s))
                    .map(|(id, _)| id.clone())
                    .collect(),
            ),
        })
        .collect();
    Ok(ScoreBins { thresholds: thresholds.to_vec(), bins })
}

/// Bins of the same cardinalities drawn from another score list: the top-k
/// of `other` for each `>` bin and the bottom-k for the `<=` bin.
pub fn count_matched(reference: &ScoreBins, ids: &[String], other: &[f64]) -> Result<ScoreBins> {
    if ids.len() != other.len() {
        return Err(Error::LengthMismatch { expected: ids.len(), actual: other.len() });
    }
    let bins = reference
        .bins
        .iter()
        .map(|b| {
            let picked = match b.kind {
                BinKind::Above(_) => top_k(ids, other, b.len()),
                BinKind::AtMost(_) => bottom_k(ids, other, b.len()),
            };
            Bin {
                kind: b.kind,
                ids: sorted(picked.into_iter().map(|i| ids[i].clone()).collect()),
            }
        })
        .collect();
    Ok(ScoreBins { thresholds: reference.thresholds.clone(), bins })
}
