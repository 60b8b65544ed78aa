use std::fmt::Write;

use super::{bin_scores, count_matched, ranks, spearman, topk_overlap, ScoreBins, Spearman};
use crate::{fmt_float, Error, Result};

/// Ranking percentiles at which top-k overlap is reported.
pub const OVERLAP_PERCENTILES: [f64; 11] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Comparison of two score columns over the same candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub method_a: String,
    pub method_b: String,
    pub ids: Vec<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub spearman: Spearman,
    /// `(percentile, |top_a ∩ top_b| / k)`.
    pub overlap: Vec<(f64, f64)>,
    /// Threshold bins of `a`.
    pub bins_a: ScoreBins,
    /// Count-matched bins of `b`.
    pub bins_b: ScoreBins,
}

pub fn rank_report(method_a: &str, method_b: &str, ids: &[String], a: &[f64], b: &[f64], thresholds: &[f64]) -> Result<RankReport> {
    if ids.len() != a.len() {
        return Err(Error::LengthMismatch { expected: ids.len(), actual: a.len() });
    }
    let rho = spearman(a, b)?;
    let overlap = OVERLAP_PERCENTILES
        .iter()
        .map(|&p| Ok((p, topk_overlap(ids, a, b, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let bins_a = bin_scores(ids, a, thresholds)?;
    let bins_b = count_matched(&bins_a, ids, b)?;
    Ok(RankReport {
        method_a: method_a.into(),
        method_b: method_b.into(),
        ids: ids.to_vec(),
        a: a.to_vec(),
        b: b.to_vec(),
        spearman: rho,
        overlap,
        bins_a,
        bins_b,
    })
}

impl RankReport {
    /// Per bin: size and the fraction of ids shared by both selections.
    pub fn bin_overlap(&self) -> Vec<(String, usize, Option<f64>)> {
        self.bins_a
            .bins
            .iter()
            .zip(&self.bins_b.bins)
            .map(|(x, y)| {
                let shared = x.ids.iter().filter(|id| y.ids.binary_search(id).is_ok()).count();
                let frac = (!x.is_empty()).then(|| shared as f64 / x.len() as f64);
                (x.label(), x.len(), frac)
            })
            .collect()
    }

    pub fn overlap_csv(&self) -> String {
        let mut s = String::from("percentile,overlap\n");
        for (p, o) in &self.overlap {
            let _ = writeln!(s, "{},{}", fmt_float(*p), fmt_float(*o));
        }
        s
    }

    pub fn bins_csv(&self) -> String {
        let mut s = String::from("bin,count,overlap\n");
        for (label, n, frac) in self.bin_overlap() {
            let _ = writeln!(s, "{label},{n},{}", frac.map(fmt_float).unwrap_or_default());
        }
        s
    }

    pub fn summary(&self) -> String {
        let sp = &self.spearman;
        let mut s = String::new();
        let _ = writeln!(s, "{} vs {} over {} candidates", self.method_a, self.method_b, sp.n);
        let _ = writeln!(s, "spearman rho = {:.6}", sp.rho);
        let _ = writeln!(s, "p-value = {:.6e} ({}, two-sided)", sp.p_value, sp.method);
        let _ = writeln!(s, "overlap = |top-k(a) ∩ top-k(b)| / k, k = ceil(percentile * n)");
        for (p, o) in &self.overlap {
            let _ = writeln!(s, "  top {:>5.1}%: {:.4}", p * 100.0, o);
        }
        let _ = writeln!(s, "bins of {} with count-matched {} selections:", self.method_a, self.method_b);
        for (label, n, frac) in self.bin_overlap() {
            match frac {
                Some(f) => {
                    let _ = writeln!(s, "  {label:<7} n = {n:<5} shared = {f:.4}");
                }
                None => {
                    let _ = writeln!(s, "  {label:<7} n = {n:<5} (empty)");
                }
            }
        }
        s
    }

    /// Static scatter plot of rank(a) against rank(b).
    pub fn scatter_svg(&self) -> String {
        let (size, margin) = (400.0, 40.0);
        let n = self.a.len() as f64;
        let (ra, rb) = (ranks(&self.a), ranks(&self.b));
        let scale = |r: f64| margin + (r - 1.0) / (n - 1.0).max(1.0) * (size - 2.0 * margin);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
        );
        let _ = writeln!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
        let (lo, hi) = (margin, size - margin);
        let _ = writeln!(s, r#"<line x1="{lo}" y1="{hi}" x2="{hi}" y2="{hi}" stroke="black"/>"#);
        let _ = writeln!(s, r#"<line x1="{lo}" y1="{hi}" x2="{lo}" y2="{lo}" stroke="black"/>"#);
        for (x, y) in ra.iter().zip(&rb) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="steelblue" fill-opacity="0.6"/>"#,
                scale(*x),
                size - scale(*y)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">rank of {}</text>"#,
            size / 2.0,
            size - 10.0,
            self.method_a
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">rank of {}</text>"#,
            size / 2.0,
            size / 2.0,
            self.method_b
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" font-size="12" text-anchor="middle">spearman = {:.3}</text>"#,
            size / 2.0,
            self.spearman.rho
        );
        s.push_str("</svg>\n");
        s
    }
}
