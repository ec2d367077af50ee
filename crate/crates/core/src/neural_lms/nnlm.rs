use std::f64::consts::LN_2;

use crate::dataio::checkpoint::{Checkpoint, ModelKind};
use crate::error::{Error, Result};
use crate::numerics::{HasParams, ParamSet, Scalar, Tensor};
use crate::quantizer::QuantizedVideo;

use super::mlp::EmbedMlp;
use super::train::{fit, parallel_batch_grad, shuffled_batches, TrainConfig, TrainCurves};
use super::streams;

/// Feed-forward model of the next atom given the previous `n − 1` atoms at
/// the same location. Context embeddings are concatenated newest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Nnlm<T: Scalar = f32> {
    n: usize,
    mlp: EmbedMlp<T>,
}

const EVAL_CHUNK: usize = 512;

impl<T: Scalar> Nnlm<T> {
    pub fn new(vocab: usize, n: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::contract("an n-gram style model needs n >= 2"));
        }
        Ok(Nnlm {
            n,
            mlp: EmbedMlp::new(vocab, n - 1, embed_dim, hidden_dim, seed)?,
        })
    }

    pub fn zeroed(vocab: usize, n: usize, embed_dim: usize, hidden_dim: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::contract("an n-gram style model needs n >= 2"));
        }
        Ok(Nnlm {
            n,
            mlp: EmbedMlp::zeroed(vocab, n - 1, embed_dim, hidden_dim)?,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn vocab(&self) -> usize {
        self.mlp.vocab
    }

    pub fn embed_dim(&self) -> usize {
        self.mlp.embed_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp.hidden_dim
    }

    pub fn embedding(&self) -> &Tensor<T> {
        self.mlp.embedding()
    }

    /// Natural-log distribution of the next atom. `context` is in temporal
    /// order (oldest first) and holds `n − 1` atoms.
    pub fn log_probs(&self, context: &[u32]) -> Result<Vec<f64>> {
        self.log_probs_batch(context)
    }

    /// Several contexts back to back, each oldest first.
    pub fn log_probs_batch(&self, contexts: &[u32]) -> Result<Vec<f64>> {
        let k = self.n - 1;
        if contexts.len() % k != 0 {
            return Err(Error::dim(format!("context length must be a multiple of {k}")));
        }
        let inputs: Vec<u32> = contexts
            .chunks_exact(k)
            .flat_map(|c| c.iter().rev().copied())
            .collect();
        self.mlp.log_probs(&inputs)
    }

    fn window_inputs(&self, seq: &[u32], pos: usize, out: &mut Vec<u32>) {
        for back in 1..self.n {
            out.push(seq[pos - back]);
        }
    }

    /// Summed loss (nats) over the windows `(stream, target position)`,
    /// adding the gradient of the sum into `grads`.
    pub fn loss_grad(&self, streams: &[Vec<u32>], windows: &[(u32, u32)], grads: &mut [Tensor<T>]) -> Result<f64> {
        let mut inputs = Vec::with_capacity(windows.len() * (self.n - 1));
        let mut targets = Vec::with_capacity(windows.len());
        for &(s, p) in windows {
            let seq = &streams[s as usize];
            self.window_inputs(seq, p as usize, &mut inputs);
            targets.push(seq[p as usize]);
        }
        self.mlp.loss_grad(&inputs, &targets, grads)
    }

    /// Total nats and prediction count over every window of every stream.
    pub fn stream_nats(&self, streams: &[Vec<u32>]) -> Result<(f64, usize)> {
        let windows = all_windows(streams, self.n - 1);
        let mut nats = 0.0;
        for chunk in windows.chunks(EVAL_CHUNK) {
            let mut inputs = Vec::with_capacity(chunk.len() * (self.n - 1));
            for &(s, p) in chunk {
                self.window_inputs(&streams[s as usize], p as usize, &mut inputs);
            }
            let lp = self.mlp.log_probs(&inputs)?;
            for (k, &(s, p)) in chunk.iter().enumerate() {
                let t = streams[s as usize][p as usize] as usize;
                nats -= lp[k * self.vocab() + t];
            }
        }
        Ok((nats, windows.len()))
    }

    pub fn cast<U: Scalar>(&self) -> Nnlm<U> {
        Nnlm {
            n: self.n,
            mlp: self.mlp.cast(),
        }
    }
}

impl Nnlm<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            ModelKind::Nnlm,
            vec![
                self.vocab() as u32,
                self.n as u32,
                self.embed_dim() as u32,
                self.hidden_dim() as u32,
            ],
            self,
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(ModelKind::Nnlm, 4)?;
        let h: Vec<usize> = c.hyper.iter().map(|&v| v as usize).collect();
        let mut m = Nnlm::zeroed(h[0], h[1], h[2], h[3])?;
        c.restore_into(&mut m)?;
        Ok(m)
    }
}

impl<T: Scalar> HasParams<T> for Nnlm<T> {
    fn params(&self) -> &ParamSet<T> {
        self.mlp.params()
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        self.mlp.params_mut()
    }
}

/// `(stream, target position)` for every target with `context` predecessors.
pub(crate) fn all_windows(streams: &[Vec<u32>], context: usize) -> Vec<(u32, u32)> {
    let mut w = Vec::new();
    for (s, seq) in streams.iter().enumerate() {
        for p in context..seq.len() {
            w.push((s as u32, p as u32));
        }
    }
    w
}

/// Minibatch training on next-atom cross-entropy; keeps the parameters with
/// the best validation bits per patch.
pub fn train_nnlm(
    model: &mut Nnlm,
    corpus: &[QuantizedVideo],
    cfg: &TrainConfig,
    valid: &[QuantizedVideo],
) -> Result<TrainCurves> {
    let train_streams = streams(corpus, model.vocab())?;
    let valid_streams = streams(valid, model.vocab())?;
    let windows = all_windows(&train_streams, model.n - 1);
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no training window of length {}",
            model.n
        )));
    }
    let zeros = model.params().zeros_like();
    fit(
        model,
        cfg,
        |_, rng| shuffled_batches(&windows, cfg, rng),
        |m, batch| {
            parallel_batch_grad(
                batch,
                || zeros.clone(),
                |chunk, g| Ok((m.loss_grad(&train_streams, chunk, g)?, chunk.len())),
            )
        },
        |m| {
            let (nats, n) = m.stream_nats(&valid_streams)?;
            Ok(if n == 0 { f64::INFINITY } else { nats / n as f64 / LN_2 })
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gradient_check, GradCheckConfig};

    #[test]
    fn zero_weights_are_uniform() {
        let m = Nnlm::<f32>::zeroed(7, 3, 4, 5).unwrap();
        let lp = m.log_probs(&[1, 2]).unwrap();
        for v in lp {
            assert!((v + (7f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_embedding_rows_give_identical_outputs() {
        let mut m = Nnlm::<f64>::new(6, 2, 3, 4, 1).unwrap();
        let row: Vec<f64> = m.params().get(0).row(2).to_vec();
        m.params_mut().get_mut(0).row_mut(4).copy_from_slice(&row);
        assert_eq!(m.log_probs(&[2]).unwrap(), m.log_probs(&[4]).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = Nnlm::<f64>::new(20, 3, 5, 6, 2).unwrap();
        // move the output layer off zero so every path carries gradient
        for (i, v) in m.params_mut().get_mut(3).data_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64 - 5.0) * 0.05;
        }
        let streams = vec![vec![1, 4, 19, 4, 7, 0, 3, 3, 12], vec![5, 6, 7, 8]];
        let windows = all_windows(&streams, 2);
        let mut g = m.params().zeros_like();
        m.loss_grad(&streams, &windows, &mut g).unwrap();
        let report = gradient_check(
            &mut m,
            &g,
            |m| {
                let mut scratch = m.params().zeros_like();
                m.loss_grad(&streams, &windows, &mut scratch)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn out_of_range_context() {
        let m = Nnlm::<f32>::zeroed(4, 2, 2, 2).unwrap();
        assert!(matches!(m.log_probs(&[4]), Err(Error::Index { .. })));
    }
}
