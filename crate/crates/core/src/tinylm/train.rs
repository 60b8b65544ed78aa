use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ParameterVector, TinyModel};
use crate::corpus::Task;
use crate::{Error, Result};

/// Plain minibatch SGD settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TinyModel,
    /// Mean corpus loss before training and after every epoch.
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Mean conditional loss over `tasks`, summed in task order.
pub fn mean_loss(model: &TinyModel, tasks: &[Task]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Invalid("mean loss over an empty task list".into()));
    }
    let losses: Vec<f64> = tasks
        .par_iter()
        .map(|t| model.conditional_loss(t))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / tasks.len() as f64)
}

pub fn train(model: &TinyModel, corpus: &[Task], hyper: &TrainHyper) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Invalid("training corpus is empty".into()));
    }
    if hyper.batch_size == 0 || !(hyper.eta >= 0.0 && hyper.eta.is_finite()) {
        return Err(Error::Config(format!(
            "invalid training hyperparameters: eta {}, batch size {}",
            hyper.eta, hyper.batch_size
        )));
    }

    let mut trajectory = vec![TrajectoryPoint {
        step: model.step(),
        mean_loss: mean_loss(model, corpus)?,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = model.params().clone();
    let mut step = model.step();
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| model.loss_and_gradient_at(params.as_slice(), &corpus[i]))
                .collect::<Result<_>>()?;
            let inv = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for (l, g) in &parts {
                loss += l;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            loss *= inv;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step: step as usize,
                    loss,
                });
            }
            params = params.axpy(-hyper.eta * inv, &ParameterVector(grad));
            step += 1;
        }
        let current = model.with_params(params.clone(), step)?;
        let mean = mean_loss(&current, corpus)?;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: step as usize,
                loss: mean,
            });
        }
        trajectory.push(TrajectoryPoint { step, mean_loss: mean });
    }

    Ok(TrainOutcome {
        model: model.with_params(params, step)?,
        trajectory,
    })
}

/// Loss trajectory as CSV with columns `step,mean_loss`.
pub fn write_trajectory(path: &Path, trajectory: &[TrajectoryPoint]) -> Result<()> {
    let mut out = String::from("step,mean_loss\n");
    for p in trajectory {
        out.push_str(&format!("{},{:.16e}\n", p.step, p.mean_loss));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
