use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::{score_one_shot, score_zero_shot, DampedHessian, InverseHessianProduct, ScoreRecord, ScoreTable};
use crate::corpus::Task;
use crate::tinylm::{dot, TinyModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Icp,
    IcpSoft,
    InflIp,
    InflHessian,
    Ft,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Icp, Method::IcpSoft, Method::InflIp, Method::InflHessian, Method::Ft];

    pub fn name(self) -> &'static str {
        match self {
            Method::Icp => "icp",
            Method::IcpSoft => "icp_soft",
            Method::InflIp => "infl_ip",
            Method::InflHessian => "infl_hessian",
            Method::Ft => "ft",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scoring method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOptions {
    pub methods: BTreeSet<Method>,
    /// Step size for the one-step fine-tune score.
    pub eta: f64,
    pub checkpoint_id: String,
}

/// Anchor tasks with everything that does not depend on the candidate
/// precomputed: zero-shot scores, gradients and inverse-Hessian products.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    tasks: Vec<Task>,
    zero_shot: Vec<f64>,
    grads: Vec<Vec<f64>>,
    products: Option<Vec<InverseHessianProduct>>,
}

impl AnchorSet {
    pub fn prepare(model: &TinyModel, anchors: &[Task], hessian: Option<&DampedHessian>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Invalid("anchor set is empty".into()));
        }
        let zero_shot = anchors
            .par_iter()
            .map(|x| score_zero_shot(model, x))
            .collect::<Result<Vec<_>>>()?;
        let grads = anchors
            .par_iter()
            .map(|x| Ok(model.gradient(x)?.values.0))
            .collect::<Result<Vec<_>>>()?;
        let products = hessian
            .map(|h| {
                anchors
                    .iter()
                    .zip(&grads)
                    .map(|(x, g)| h.inverse_product(g, &x.id))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(AnchorSet {
            tasks: anchors.to_vec(),
            zero_shot,
            grads,
            products,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn lambda(&self) -> Option<f64> {
        self.products.as_ref().and_then(|p| p.first()).map(|p| p.lambda)
    }
}

fn score_one(model: &TinyModel, z: &Task, anchors: &AnchorSet, opts: &ScoreOptions) -> Result<ScoreRecord> {
    let n = anchors.len() as f64;
    let wants = |m: Method| opts.methods.contains(&m);
    let mut rec = ScoreRecord {
        id: z.id.clone(),
        icp: None,
        icp_soft: None,
        infl_ip: None,
        infl_hessian: None,
        ft: None,
        n_anchors: anchors.len(),
        eta: opts.eta,
        lambda: None,
        model_checkpoint: opts.checkpoint_id.clone(),
    };

    if wants(Method::Icp) || wants(Method::IcpSoft) {
        let mut wins = 0usize;
        let mut gain = 0.0;
        for (x, &zs) in anchors.tasks.iter().zip(&anchors.zero_shot) {
            let os = score_one_shot(model, z, x)?;
            wins += usize::from(os > zs);
            gain += os - zs;
        }
        if wants(Method::Icp) {
            rec.icp = Some(wins as f64 / n);
        }
        if wants(Method::IcpSoft) {
            rec.icp_soft = Some(gain / n);
        }
    }

    let needs_grad = wants(Method::InflIp) || wants(Method::InflHessian) || wants(Method::Ft);
    if needs_grad {
        let gz = model.gradient(z)?;
        if wants(Method::InflIp) {
            let sum = anchors.grads.iter().fold(0.0, |acc, gx| acc + dot(gx, &gz.values.0));
            rec.infl_ip = Some(sum / n);
        }
        if wants(Method::InflHessian) {
            let products = anchors
                .products
                .as_ref()
                .ok_or_else(|| Error::Invalid("infl_hessian requested without a Hessian".into()))?;
            let sum = products.iter().fold(0.0, |acc, p| acc + dot(&p.values, &gz.values.0));
            rec.infl_hessian = Some(sum / n);
            rec.lambda = anchors.lambda();
        }
        if wants(Method::Ft) {
            let stepped = model.sgd_step(&gz, opts.eta)?;
            let mut wins = 0usize;
            for (x, &zs) in anchors.tasks.iter().zip(&anchors.zero_shot) {
                wins += usize::from(score_zero_shot(&stepped, x)? > zs);
            }
            rec.ft = Some(wins as f64 / n);
        }
    }

    for (name, v) in [
        ("icp", rec.icp),
        ("icp_soft", rec.icp_soft),
        ("infl_ip", rec.infl_ip),
        ("infl_hessian", rec.infl_hessian),
        ("ft", rec.ft),
    ] {
        if v.is_some_and(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("{name} score of {}", z.id),
                index: 0,
            });
        }
    }
    Ok(rec)
}

/// Scores every candidate. Candidates are processed in parallel on the
/// current rayon pool; each record is computed serially in anchor order, so
/// the table does not depend on the number of workers.
pub fn score_candidates(model: &TinyModel, candidates: &[Task], anchors: &AnchorSet, opts: &ScoreOptions) -> Result<ScoreTable> {
    if anchors.is_empty() {
        return Err(Error::Invalid("anchor set is empty".into()));
    }
    let records = candidates
        .par_iter()
        .map(|z| score_one(model, z, anchors, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable::new(records))
}
