//! The numerical verification suite behind `verify`.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::commands::{load_bundle, source_bundle, train_base};
use super::{with_workers, write_file, ExperimentConfig, OutputLayout};
use crate::analysis::spearman;
use crate::corpus::{CorpusBundle, Task};
use crate::implicit_gd::{decompose, linear_attention, sign_agreement, AttentionProjection, ContextSplit, SignAgreement};
use crate::tinylm::{
    check_gradient, finite_difference_gradient, init_model_with_scale, load_checkpoint, train, AttentionKind, ModelConfig, Objective,
    TinyModel, FD_STEP,
};
use crate::valuation::{
    first_order_residual, score_candidates, score_zero_shot, AnchorSet, ConvexHead, DampedHessian, HeadLoss, Method, ScoreOptions,
};
use crate::{fmt_float, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Added to one analytic gradient coordinate of the first gradient pair.
    pub gradient_sabotage: Option<(usize, f64)>,
    /// Absolute damping of the rank-identity check.
    pub damping_limit_lambda: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            gradient_sabotage: None,
            damping_limit_lambda: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    /// Human-readable acceptance condition on `measured`.
    pub tolerance: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    /// Sign agreement of the trained and random-init linear-attention models.
    pub trained: SignAgreement,
    pub random_init: SignAgreement,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {}: measured {} (require {}) [{:.2}s] {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance,
                c.seconds,
                c.detail
            );
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,measured,tolerance,passed\n");
        for c in &self.checks {
            let _ = writeln!(s, "{},{},{},{}", c.name, fmt_float(c.measured), c.tolerance, u8::from(c.passed));
        }
        s
    }
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Timer(Instant::now())
    }

    fn check(&self, name: &str, measured: f64, tolerance: &str, passed: bool, detail: String) -> CheckResult {
        CheckResult {
            name: name.into(),
            measured,
            tolerance: tolerance.into(),
            passed,
            detail,
            seconds: self.0.elapsed().as_secs_f64(),
        }
    }
}

fn cyclic_pairs<'a>(zs: &'a [Task], xs: &'a [Task], n: usize) -> Vec<(&'a Task, &'a Task)> {
    (0..n).map(|i| (&zs[i % zs.len()], &xs[i % xs.len()])).collect()
}

/// `|conditional_loss + score_zero_shot|` over 1000 (model, task) pairs.
pub fn check_icp_identity(models: &[TinyModel], tasks: &[Task]) -> Result<CheckResult> {
    let t = Timer::start();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let m = &models[i % models.len()];
        let x = &tasks[(i / models.len()) % tasks.len()];
        worst = worst.max((m.conditional_loss(x)? + score_zero_shot(m, x)?).abs());
    }
    Ok(t.check("icp_lr_identity", worst, "< 1e-12", worst < 1e-12, "max over 1000 pairs".into()))
}

/// Analytic vs central-difference gradients over 20 (model, task) pairs.
pub fn check_gradients(models: &[TinyModel], tasks: &[Task], sabotage: Option<(usize, f64)>) -> Result<CheckResult> {
    let t = Timer::start();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut checked = 0;
    for i in 0..20 {
        let m = &models[i % models.len()];
        let x = &tasks[(i * 7) % tasks.len()];
        let mut analytic = m.gradient(x)?.values.0;
        if let (0, Some((k, delta))) = (i, sabotage) {
            let k = k % analytic.len();
            analytic[k] += delta;
        }
        let numeric = finite_difference_gradient(m, x, FD_STEP)?;
        let report = check_gradient(&analytic, &numeric, 1e-8, 1e-4);
        worst = worst.max(report.max_rel_error);
        failures += report.failures.len();
        checked += report.checked;
    }
    Ok(t.check(
        "gradient_vs_finite_difference",
        worst,
        "< 1e-4",
        failures == 0,
        format!("{checked} coordinates checked, {failures} failures"),
    ))
}

fn mean_ratio<O: Objective>(obj: &O, pairs: &[(&O::Example, &O::Example)], eta: f64) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut used = 0;
    for (z, x) in pairs {
        let full = first_order_residual(obj, z, x, eta)?;
        if full == 0.0 {
            continue;
        }
        sum += first_order_residual(obj, z, x, eta / 2.0)? / full;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Invalid("every first-order residual is zero".into()));
    }
    Ok((sum / used as f64, used))
}

/// Residual ratio `r(eta/2) / r(eta)` on the model and on the quadratic head.
pub fn check_residual_scaling(model: &TinyModel, bundle: &CorpusBundle, eta: f64) -> Result<Vec<CheckResult>> {
    let t = Timer::start();
    let pairs = cyclic_pairs(&bundle.candidates, &bundle.anchors, 50);
    let (ratio, used) = mean_ratio(model, &pairs, eta)?;
    let full = t.check(
        "residual_scaling",
        ratio,
        "in [0.3, 0.7]",
        (0.3..=0.7).contains(&ratio),
        format!("mean over {used} pairs at eta {eta:e}"),
    );

    let t = Timer::start();
    let head = ConvexHead::for_model(model, HeadLoss::Squared);
    let zs = ConvexHead::featurize(model, &bundle.candidates[..50.min(bundle.candidates.len())])?;
    let xs = ConvexHead::featurize(model, &bundle.anchors)?;
    let head_pairs: Vec<_> = (0..50).map(|i| (&zs[i % zs.len()], &xs[i % xs.len()])).collect();
    let (q, used) = mean_ratio(&head, &head_pairs, eta)?;
    let quad = t.check(
        "residual_scaling_quadratic",
        q,
        "in [0.45, 0.55]",
        (0.45..=0.55).contains(&q),
        format!("mean over {used} pairs at eta {eta:e}"),
    );
    Ok(vec![full, quad])
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..=1.0))
}

/// Decomposition sum vs direct linear attention over 100 random instances.
pub fn check_decomposition(seed: u64) -> Result<CheckResult> {
    let t = Timer::start();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (d_in, d_out) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (n_train, n_test) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let proj = AttentionProjection::new(
            random_matrix(&mut rng, d_out, d_in),
            random_matrix(&mut rng, d_out, d_in),
            random_matrix(&mut rng, d_out, d_in),
        )?;
        let split = ContextSplit::new(random_matrix(&mut rng, d_in, n_train), random_matrix(&mut rng, d_in, n_test))?;
        let q = rng.gen_range(0..n_test);
        let direct = linear_attention(&proj, &split, q)?;
        let parts = decompose(&proj, &split, q)?;
        worst = worst.max((parts.sum() - direct).amax());
    }
    Ok(t.check("decomposition_identity", worst, "< 1e-10", worst < 1e-10, "max over 100 instances".into()))
}

/// Spearman between heavily damped Hessian influence and the plain inner
/// product over the first 50 candidates.
pub fn check_damping_limit(model: &TinyModel, bundle: &CorpusBundle, lambda: f64) -> Result<CheckResult> {
    let t = Timer::start();
    let candidates = &bundle.candidates[..50.min(bundle.candidates.len())];
    let hessian = DampedHessian::build(model, candidates, lambda)?;
    let anchors = AnchorSet::prepare(model, &bundle.anchors, Some(&hessian))?;
    let opts = ScoreOptions {
        methods: [Method::InflIp, Method::InflHessian].into_iter().collect(),
        eta: 1e-4,
        checkpoint_id: String::new(),
    };
    let table = score_candidates(model, candidates, &anchors, &opts)?;
    let values = |m| -> Result<Vec<f64>> { Ok(table.column(m)?.into_iter().map(|(_, v)| v).collect()) };
    let rho = spearman(&values(Method::InflHessian)?, &values(Method::InflIp)?)?.rho;
    Ok(t.check(
        "damping_limit_rank_identity",
        rho,
        "= 1",
        rho == 1.0,
        format!("{} candidates, P = {}, lambda {lambda:e}", candidates.len(), model.num_params()),
    ))
}

/// One-shot vs one-step sign agreement on a trained and a random-init
/// linear-attention model.
pub fn check_sign_agreement(cfg: &ExperimentConfig, bundle: &CorpusBundle) -> Result<(CheckResult, SignAgreement, SignAgreement)> {
    let t = Timer::start();
    let mc: ModelConfig = cfg.verify_model_config(bundle.vocabulary.size());
    debug_assert_eq!(mc.attention, AttentionKind::Linear);
    let init = init_model_with_scale(mc, cfg.seed, cfg.init_scale)?;
    let trained = train(&init, &bundle.pretrain, &cfg.verify_train_hyper())?.model;
    let pairs = cyclic_pairs(&bundle.candidates, &bundle.anchors, cfg.verify_pairs);
    let at_trained = sign_agreement(&trained, &pairs, cfg.verify_eta)?;
    let at_init = sign_agreement(&init, &pairs, cfg.verify_eta)?;
    let passed = at_trained.fraction > 0.5 && at_trained.p_value < 0.05 && at_trained.fraction > at_init.fraction;
    let check = t.check(
        "icp_influence_sign_agreement",
        at_trained.fraction,
        "> 0.5, p < 0.05, above random init",
        passed,
        format!(
            "{} pairs, p = {:.3e}; random init {:.4} (p = {:.3e}); mean gap trained {:.4e}, random init {:.4e}",
            pairs.len(),
            at_trained.p_value,
            at_init.fraction,
            at_init.p_value,
            at_trained.mean_gap,
            at_init.mean_gap
        ),
    );
    Ok((check, at_trained, at_init))
}

fn verification_inputs(cfg: &ExperimentConfig) -> Result<(CorpusBundle, TinyModel)> {
    let layout = OutputLayout::new(&cfg.out);
    let bundle = if layout.corpus().is_dir() {
        load_bundle(&layout)?
    } else {
        source_bundle(cfg)?
    };
    let model = if layout.base_checkpoint().is_file() {
        load_checkpoint(&layout.base_checkpoint())?
    } else {
        train_base(cfg, &bundle)?.model
    };
    Ok((bundle, model))
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    cmd_verify_with(cfg, &VerifyOptions::default())
}

/// Runs every check, writes `reports/verify.txt` and `reports/verify.csv`.
/// Failed checks are reported, not returned as errors.
pub fn cmd_verify_with(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<VerifyReport> {
    cfg.validate()?;
    let report = with_workers(cfg.workers, || {
        let (bundle, base) = verification_inputs(cfg)?;
        let v = bundle.vocabulary.size();
        let mut models = vec![base.clone()];
        for (i, attention) in [AttentionKind::Softmax, AttentionKind::Linear, AttentionKind::Softmax].into_iter().enumerate() {
            let mc = ModelConfig {
                attention,
                ..cfg.model_config(v)
            };
            models.push(init_model_with_scale(mc, cfg.seed + 1 + i as u64, cfg.init_scale)?);
        }
        let tasks: Vec<Task> = bundle.all_tasks().cloned().collect();

        let mut checks = vec![
            check_icp_identity(&models, &tasks)?,
            check_gradients(&models, &tasks, opts.gradient_sabotage)?,
        ];
        checks.extend(check_residual_scaling(&base, &bundle, cfg.verify_eta)?);
        checks.push(check_decomposition(cfg.seed)?);
        checks.push(check_damping_limit(&base, &bundle, opts.damping_limit_lambda)?);
        let (agreement, trained, random_init) = check_sign_agreement(cfg, &bundle)?;
        checks.push(agreement);
        Ok(VerifyReport {
            checks,
            trained,
            random_init,
        })
    })?;
    let layout = OutputLayout::new(&cfg.out);
    write_file(&layout.reports().join("verify.txt"), &report.to_text())?;
    write_file(&layout.reports().join("verify.csv"), &report.to_csv())?;
    Ok(report)
}
