use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{sgd_momentum_step, DetRng, HasParams, OptimizerState, ParamSet, Tensor, DEFAULT_CLIP};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub bptt_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub clip_threshold: Option<f64>,
    /// Caps the training examples drawn per epoch; `None` uses all of them.
    pub max_examples_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bptt_steps: 8,
            batch_size: 128,
            learning_rate: 0.005,
            momentum: 0.9,
            epochs: 10,
            seed: 0,
            clip_threshold: Some(DEFAULT_CLIP),
            max_examples_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bptt_steps == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::contract("bptt_steps, batch_size and epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract("momentum must lie in [0, 1)"));
        }
        if self.clip_threshold.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::contract("clip threshold must be positive"));
        }
        if self.max_examples_per_epoch == Some(0) {
            return Err(Error::contract("max_examples_per_epoch must be positive"));
        }
        Ok(())
    }
}

/// Loss curves in bits per predicted atom.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainCurves {
    /// Validation bits before the first update.
    pub initial_valid_bits: f64,
    /// Mean training bits of each epoch's minibatches.
    pub train_bits: Vec<f64>,
    pub valid_bits: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept; `None` if no epoch
    /// improved on the initial parameters.
    pub best_epoch: Option<usize>,
    pub best_valid_bits: f64,
}

/// Summed loss (nats), number of predictions and gradients of the mean loss.
pub type BatchGrad = (f64, usize, Vec<Tensor>);

/// Minibatch SGD with momentum. `plan` lists the epoch's batches, `grad`
/// returns the loss and mean-loss gradient of one batch, and `validate`
/// returns validation bits per prediction. The parameters with the best
/// validation score (including the initial ones) are restored at the end.
pub(crate) fn fit<M, B>(
    model: &mut M,
    cfg: &TrainConfig,
    mut plan: impl FnMut(usize, &mut DetRng) -> Vec<B>,
    mut grad: impl FnMut(&M, &B) -> Result<BatchGrad>,
    mut validate: impl FnMut(&M) -> Result<f64>,
) -> Result<TrainCurves>
where
    M: HasParams<f32>,
{
    cfg.validate()?;
    let tensors: Vec<&Tensor> = model.params().iter().map(|p| &p.value).collect();
    let mut opt = OptimizerState::new(&tensors, cfg.learning_rate, cfg.momentum, cfg.clip_threshold)?;
    let mut rng = DetRng::new(cfg.seed).split("train");
    let mut curves = TrainCurves {
        initial_valid_bits: validate(model)?,
        ..Default::default()
    };
    curves.best_valid_bits = curves.initial_valid_bits;
    let mut best: ParamSet<f32> = model.params().clone();

    for epoch in 0..cfg.epochs {
        let mut erng = rng.split(&format!("epoch{epoch}"));
        let batches = plan(epoch, &mut erng);
        if batches.is_empty() {
            return Err(Error::InsufficientData("no training examples".into()));
        }
        let (mut nats, mut count) = (0.0, 0usize);
        for (bi, b) in batches.iter().enumerate() {
            let (loss, n, mut g) = grad(model, b)?;
            let mean = if n > 0 { loss / n as f64 } else { 0.0 };
            if !mean.is_finite() || g.iter().any(|t| t.ensure_finite().is_err()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    loss: mean,
                });
            }
            sgd_momentum_step(model.params_mut().tensors_mut(), &mut g, &mut opt)?;
            nats += loss;
            count += n;
        }
        if model.params().ensure_finite().is_err() {
            return Err(Error::Divergence {
                epoch,
                batch: batches.len() - 1,
                loss: f64::NAN,
            });
        }
        curves.train_bits.push(nats / count.max(1) as f64 / std::f64::consts::LN_2);
        let v = validate(model)?;
        if !v.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches.len() - 1,
                loss: v,
            });
        }
        curves.valid_bits.push(v);
        if v < curves.best_valid_bits {
            curves.best_valid_bits = v;
            curves.best_epoch = Some(epoch);
            best = model.params().clone();
        }
        rng = rng.split("next");
    }
    model.params_mut().assign(&best)?;
    Ok(curves)
}

/// Shuffles `items` and groups them into batches of `cfg.batch_size`,
/// keeping at most `cfg.max_examples_per_epoch`.
pub(crate) fn shuffled_batches<E: Clone>(items: &[E], cfg: &TrainConfig, rng: &mut DetRng) -> Vec<Vec<E>> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(rng);
    if let Some(m) = cfg.max_examples_per_epoch {
        idx.truncate(m);
    }
    idx.chunks(cfg.batch_size)
        .map(|c| c.iter().map(|&i| items[i].clone()).collect())
        .collect()
}

/// Examples per work unit in [`parallel_batch_grad`]. Fixed, so the
/// reduction order does not depend on the thread count.
const SHARD: usize = 8;

/// Sums per-shard `(nats, count, grads)` in shard order and scales the
/// gradient to the batch mean.
pub(crate) fn parallel_batch_grad<E: Sync>(
    examples: &[E],
    zeros: impl Fn() -> Vec<Tensor> + Sync,
    shard_grad: impl Fn(&[E], &mut Vec<Tensor>) -> Result<(f64, usize)> + Sync,
) -> Result<BatchGrad> {
    let parts: Vec<Result<(f64, usize, Vec<Tensor>)>> = examples
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut g = zeros();
            let (l, n) = shard_grad(chunk, &mut g)?;
            Ok((l, n, g))
        })
        .collect();
    let mut total = zeros();
    let (mut loss, mut n) = (0.0, 0usize);
    for p in parts {
        let (l, c, g) = p?;
        loss += l;
        n += c;
        for (a, b) in total.iter_mut().zip(&g) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
    if n > 0 {
        let s = 1.0 / n as f32;
        total.iter_mut().for_each(|t| t.scale(s));
    }
    Ok((loss, n, total))
}
