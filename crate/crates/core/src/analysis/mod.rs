//! Ranking statistics over per-candidate scores: Spearman correlation with a
//! significance test, top-k overlap, and threshold bins.

mod bins;
mod report;

use std::collections::BTreeMap;
use std::fmt;

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::{Error, Result};

pub use bins::{bin_scores, count_matched, Bin, BinKind, ScoreBins, DEFAULT_THRESHOLDS};
pub use report::{rank_report, RankReport, OVERLAP_PERCENTILES};

/// Largest sample size for which the permutation p-value is enumerated.
pub const EXACT_PERMUTATION_MAX_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    ExactPermutation,
    TApproximation,
    /// One input has no rank variance; rho is reported as 0 and p as 1.
    Degenerate,
}

impl fmt::Display for PValueMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PValueMethod::ExactPermutation => "exact-permutation",
            PValueMethod::TApproximation => "t-approximation",
            PValueMethod::Degenerate => "degenerate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: PValueMethod,
    pub n: usize,
}

impl Spearman {
    pub fn degenerate(&self) -> bool {
        self.method == PValueMethod::Degenerate
    }

    /// `rho > 0` and `p < alpha`.
    pub fn positive_at(&self, alpha: f64) -> bool {
        self.rho > 0.0 && self.p_value < alpha
    }
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { what: what.into(), index }),
        None => Ok(()),
    }
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Fraction of permutations of `b` whose |rho| reaches the observed one.
/// Permuting `b` leaves its mean and spread unchanged, so each permutation
/// only needs the cross term.
fn permutation_p(ra: &[f64], rb: &[f64], rho: f64) -> f64 {
    let n = rb.len();
    let center = |r: &[f64]| {
        let m = r.iter().sum::<f64>() / n as f64;
        r.iter().map(|x| x - m).collect::<Vec<f64>>()
    };
    let (ca, mut perm) = (center(ra), center(rb));
    let norm = (ca.iter().map(|x| x * x).sum::<f64>() * perm.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let target = rho.abs() * norm - 1e-12 * norm;
    let mut c = vec![0usize; n];
    let (mut hits, mut total) = (0u64, 0u64);
    let mut visit = |p: &[f64]| {
        total += 1;
        let cross: f64 = ca.iter().zip(p).map(|(x, y)| x * y).sum();
        if cross.abs() >= target {
            hits += 1;
        }
    };
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

fn t_approx_p(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Spearman rank correlation of two equally long, position-paired lists.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Spearman> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), actual: b.len() });
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::Invalid(format!("spearman needs at least 3 pairs, got {n}")));
    }
    check_finite(a, "first score list")?;
    check_finite(b, "second score list")?;
    let (ra, rb) = (ranks(a), ranks(b));
    let Some(rho) = pearson(&ra, &rb) else {
        return Ok(Spearman { rho: 0.0, p_value: 1.0, method: PValueMethod::Degenerate, n });
    };
    let (p_value, method) = if n <= EXACT_PERMUTATION_MAX_N {
        (permutation_p(&ra, &rb, rho), PValueMethod::ExactPermutation)
    } else {
        (t_approx_p(rho, n), PValueMethod::TApproximation)
    };
    Ok(Spearman { rho, p_value, method, n })
}

/// Aligns two id-keyed score lists. Fails listing every id present on only
/// one side.
pub fn pair_by_id(a: &[(String, f64)], b: &[(String, f64)]) -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let ma: BTreeMap<&str, f64> = a.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mb: BTreeMap<&str, f64> = b.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    if ma.len() != a.len() || mb.len() != b.len() {
        return Err(Error::Invalid("duplicate candidate id in score list".into()));
    }
    let unmatched: Vec<&str> = ma
        .keys()
        .filter(|k| !mb.contains_key(*k))
        .chain(mb.keys().filter(|k| !ma.contains_key(*k)))
        .copied()
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Invalid(format!("unmatched candidate ids: {}", unmatched.join(", "))));
    }
    let ids: Vec<String> = ma.keys().map(|k| k.to_string()).collect();
    let va = ma.values().copied().collect();
    let vb = mb.values().copied().collect();
    Ok((ids, va, vb))
}

/// Spearman correlation of two id-keyed score lists.
pub fn spearman_by_id(a: &[(String, f64)], b: &[(String, f64)]) -> Result<Spearman> {
    let (_, va, vb) = pair_by_id(a, b)?;
    spearman(&va, &vb)
}

/// Indices of the `k` highest scores, ties broken by id ascending.
pub fn top_k(ids: &[String], scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then_with(|| ids[i].cmp(&ids[j])));
    order.truncate(k);
    order
}

/// Indices of the `k` lowest scores, ties broken by id ascending.
pub fn bottom_k(ids: &[String], scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then_with(|| ids[i].cmp(&ids[j])));
    order.truncate(k);
    order
}

/// `|top(a) ∩ top(b)| / m` with `m = ceil(fraction * n)`.
pub fn topk_overlap(ids: &[String], a: &[f64], b: &[f64], fraction: f64) -> Result<f64> {
    if a.len() != b.len() || ids.len() != a.len() {
        return Err(Error::LengthMismatch { expected: ids.len(), actual: a.len().max(b.len()) });
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Invalid(format!("overlap fraction must lie in (0, 1], got {fraction}")));
    }
    let m = (fraction * a.len() as f64).ceil() as usize;
    if m == 0 {
        return Err(Error::Invalid("top-k selection is empty".into()));
    }
    let mut in_a = vec![false; a.len()];
    for i in top_k(ids, a, m) {
        in_a[i] = true;
    }
    let shared = top_k(ids, b, m).into_iter().filter(|&i| in_a[i]).count();
    Ok(shared as f64 / m as f64)
}

/// One-sided sign test: `P(X >= successes)` for `X ~ Binomial(trials, 1/2)`.
pub fn binomial_sign_test(successes: usize, trials: usize) -> f64 {
    if successes == 0 || trials == 0 {
        return 1.0;
    }
    let dist = Binomial::new(0.5, trials as u64).expect("valid binomial");
    dist.sf(successes as u64 - 1)
}

#[cfg(test)]
mod tests;
