use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::Method;
use crate::{fmt_float, Error, Result};

/// All valuation scores of one candidate. Scores that were not requested are
/// `None` and serialize as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub icp: Option<f64>,
    pub icp_soft: Option<f64>,
    pub infl_ip: Option<f64>,
    pub infl_hessian: Option<f64>,
    pub ft: Option<f64>,
    pub n_anchors: usize,
    pub eta: f64,
    pub lambda: Option<f64>,
    pub model_checkpoint: String,
}

impl ScoreRecord {
    pub fn get(&self, method: Method) -> Option<f64> {
        match method {
            Method::Icp => self.icp,
            Method::IcpSoft => self.icp_soft,
            Method::InflIp => self.infl_ip,
            Method::InflHessian => self.infl_hessian,
            Method::Ft => self.ft,
        }
    }
}

pub const HEADER: &str = "id,icp,icp_soft,infl_ip,infl_hessian,ft,n_anchors,eta,lambda,model_checkpoint";

/// 17 significant digits.
fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Score records sorted by candidate id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    records: Vec<ScoreRecord>,
}

impl ScoreTable {
    pub fn new(mut records: Vec<ScoreRecord>) -> Self {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        ScoreTable { records }
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    /// `(id, score)` pairs for one method, or an error naming the first
    /// candidate without that score.
    pub fn column(&self, method: Method) -> Result<Vec<(String, f64)>> {
        self.records
            .iter()
            .map(|r| {
                r.get(method)
                    .map(|v| (r.id.clone(), v))
                    .ok_or_else(|| Error::Invalid(format!("candidate {} has no {method} score", r.id)))
            })
            .collect()
    }

    /// Methods present for every record.
    pub fn methods(&self) -> Vec<Method> {
        Method::ALL
            .into_iter()
            .filter(|&m| !self.records.is_empty() && self.records.iter().all(|r| r.get(m).is_some()))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.records {
            let row = [
                r.id.clone(),
                fmt_opt(r.icp),
                fmt_opt(r.icp_soft),
                fmt_opt(r.infl_ip),
                fmt_opt(r.infl_hessian),
                fmt_opt(r.ft),
                r.n_anchors.to_string(),
                fmt_float(r.eta),
                fmt_opt(r.lambda),
                r.model_checkpoint.clone(),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => return Err(bad(1, format!("expected header {HEADER:?}"))),
        }
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 10 {
                return Err(bad(lineno, format!("expected 10 columns, found {}", cells.len())));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(lineno, format!("bad number {s:?}")))
                }
            };
            let id = cells[0].to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            records.push(ScoreRecord {
                id,
                icp: opt(cells[1])?,
                icp_soft: opt(cells[2])?,
                infl_ip: opt(cells[3])?,
                infl_hessian: opt(cells[4])?,
                ft: opt(cells[5])?,
                n_anchors: cells[6].parse().map_err(|_| bad(lineno, "bad n_anchors".into()))?,
                eta: opt(cells[7])?.ok_or_else(|| bad(lineno, "missing eta".into()))?,
                lambda: opt(cells[8])?,
                model_checkpoint: cells[9].to_string(),
            });
        }
        Ok(ScoreTable::new(records))
    }
}
