use std::f64::consts::LN_2;
use std::sync::Mutex;

use rand::seq::SliceRandom;

use crate::dataio::checkpoint::{Checkpoint, ModelKind};
use crate::error::{check_index, Error, Result};
use crate::numerics::{
    gemm, glorot, log_softmax_f64, logistic, softmax_xent_raw, DetRng, HasParams, Mat, ParamSet, Scalar, Tensor,
};
use crate::quantizer::QuantizedVideo;

use super::streams;
use super::train::{fit, parallel_batch_grad, TrainConfig, TrainCurves};

/// Initial hidden state value in every unit (logistic midpoint).
pub const INITIAL_HIDDEN: f64 = 0.5;

const EMB: usize = 0;
const REC: usize = 1;
const OW: usize = 2;
const OB: usize = 3;

/// Recurrent model `h = σ(W_h h_prev + W_x[x])`, `p(next) = softmax(W_o h + b_o)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rnn<T: Scalar = f32> {
    vocab: usize,
    hidden: usize,
    params: ParamSet<T>,
}

impl<T: Scalar> Rnn<T> {
    pub fn zeroed(vocab: usize, hidden: usize) -> Result<Self> {
        if vocab == 0 || hidden == 0 {
            return Err(Error::contract("vocab and hidden_dim must be positive"));
        }
        let mut p = ParamSet::new();
        p.push("embed", Tensor::zeros(&[vocab, hidden]));
        p.push("recur", Tensor::zeros(&[hidden, hidden]));
        p.push("out.w", Tensor::zeros(&[vocab, hidden]));
        p.push("out.b", Tensor::zeros(&[vocab]));
        Ok(Rnn { vocab, hidden, params: p })
    }

    /// Glorot input and recurrent weights, zero output layer.
    pub fn new(vocab: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeroed(vocab, hidden)?;
        let mut rng = DetRng::new(seed).split("rnn");
        *m.params.get_mut(EMB) = glorot(&[vocab, hidden], vocab, hidden, &mut rng);
        *m.params.get_mut(REC) = glorot(&[hidden, hidden], hidden, hidden, &mut rng);
        Ok(m)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn embedding(&self) -> &Tensor<T> {
        self.params.get(EMB)
    }

    pub fn initial_state(&self) -> Vec<T> {
        vec![T::lit(INITIAL_HIDDEN); self.hidden]
    }

    fn advance(&self, h_prev: &[T], x: usize, h: &mut [T]) {
        let w = self.params.get(REC).data();
        let e = self.params.get(EMB).row(x);
        for (r, hv) in h.iter_mut().enumerate() {
            let row = &w[r * self.hidden..(r + 1) * self.hidden];
            let mut s = e[r];
            for (a, b) in row.iter().zip(h_prev) {
                s += *a * *b;
            }
            *hv = logistic(s);
        }
    }

    fn logits_of(&self, h: &[T], out: &mut [T]) {
        out.copy_from_slice(self.params.get(OB).data());
        gemm(
            Mat::new(h, 1, self.hidden),
            Mat::t(self.params.get(OW).data(), self.vocab, self.hidden),
            out,
            T::one(),
        );
    }

    /// Consumes atom `x`; returns the new state and the natural-log
    /// distribution of the following atom.
    pub fn step(&self, h_prev: &[T], x: u32) -> Result<(Vec<T>, Vec<f64>)> {
        if h_prev.len() != self.hidden {
            return Err(Error::dim(format!(
                "hidden state has {} entries, model has {}",
                h_prev.len(),
                self.hidden
            )));
        }
        check_index("atom", x as usize, self.vocab)?;
        let mut h = vec![T::zero(); self.hidden];
        self.advance(h_prev, x as usize, &mut h);
        let mut logits = vec![T::zero(); self.vocab];
        self.logits_of(&h, &mut logits);
        let mut lp = vec![0.0; self.vocab];
        log_softmax_f64(&logits, &mut lp);
        Ok((h, lp))
    }

    /// Teacher-forced BPTT over `seq` from state `h0`: inputs `seq[..len-1]`,
    /// targets `seq[1..]`. Adds the gradient of the summed loss into `grads`
    /// and returns `(nats, final state)`. No gradient flows into `h0`.
    pub fn bptt(&self, seq: &[u32], h0: &[T], grads: &mut [Tensor<T>]) -> Result<(f64, Vec<T>)> {
        if seq.len() < 2 {
            return Ok((0.0, h0.to_vec()));
        }
        for &a in seq {
            check_index("atom", a as usize, self.vocab)?;
        }
        let (hd, v) = (self.hidden, self.vocab);
        let s = seq.len() - 1;
        // hs[k] is the state before input k; hs[s] the final state
        let mut hs = vec![T::zero(); (s + 1) * hd];
        hs[..hd].copy_from_slice(h0);
        for k in 0..s {
            let (prev, next) = hs.split_at_mut((k + 1) * hd);
            self.advance(&prev[k * hd..], seq[k] as usize, &mut next[..hd]);
        }
        let after = &hs[hd..];
        let mut logits = Vec::with_capacity(s * v);
        for _ in 0..s {
            logits.extend_from_slice(self.params.get(OB).data());
        }
        gemm(
            Mat::new(after, s, hd),
            Mat::t(self.params.get(OW).data(), v, hd),
            &mut logits,
            T::one(),
        );
        let mut dlog = vec![T::zero(); s * v];
        let mut nats = 0.0;
        for k in 0..s {
            nats += softmax_xent_raw(
                &logits[k * v..(k + 1) * v],
                seq[k + 1] as usize,
                T::one(),
                &mut dlog[k * v..(k + 1) * v],
            );
        }
        gemm(Mat::t(&dlog, s, v), Mat::new(after, s, hd), grads[OW].data_mut(), T::one());
        for r in dlog.chunks_exact(v) {
            for (g, &d) in grads[OB].data_mut().iter_mut().zip(r) {
                *g += d;
            }
        }
        let mut dh_out = vec![T::zero(); s * hd];
        gemm(
            Mat::new(&dlog, s, v),
            Mat::new(self.params.get(OW).data(), v, hd),
            &mut dh_out,
            T::zero(),
        );
        let w = self.params.get(REC).data();
        let mut carry = vec![T::zero(); hd];
        let mut dpre = vec![T::zero(); hd];
        for k in (0..s).rev() {
            let h = &hs[(k + 1) * hd..(k + 2) * hd];
            let hp = &hs[k * hd..(k + 1) * hd];
            for r in 0..hd {
                let dh = dh_out[k * hd + r] + carry[r];
                dpre[r] = dh * h[r] * (T::one() - h[r]);
            }
            let gw = grads[REC].data_mut();
            for r in 0..hd {
                let d = dpre[r];
                for (g, &p) in gw[r * hd..(r + 1) * hd].iter_mut().zip(hp) {
                    *g += d * p;
                }
            }
            let x = seq[k] as usize;
            for (g, &d) in grads[EMB].data_mut()[x * hd..(x + 1) * hd].iter_mut().zip(&dpre) {
                *g += d;
            }
            carry.iter_mut().for_each(|c| *c = T::zero());
            for r in 0..hd {
                let d = dpre[r];
                for (c, &wv) in carry.iter_mut().zip(&w[r * hd..(r + 1) * hd]) {
                    *c += d * wv;
                }
            }
        }
        let fin = hs[s * hd..].to_vec();
        Ok((nats, fin))
    }

    /// Nats over a whole stream starting from the initial state.
    pub fn stream_nats(&self, seq: &[u32]) -> Result<(f64, usize)> {
        if seq.len() < 2 {
            return Ok((0.0, 0));
        }
        let mut h = self.initial_state();
        let mut nats = 0.0;
        for k in 0..seq.len() - 1 {
            let (hn, lp) = self.step(&h, seq[k])?;
            check_index("atom", seq[k + 1] as usize, self.vocab)?;
            nats -= lp[seq[k + 1] as usize];
            h = hn;
        }
        Ok((nats, seq.len() - 1))
    }

    pub fn cast<U: Scalar>(&self) -> Rnn<U> {
        Rnn {
            vocab: self.vocab,
            hidden: self.hidden,
            params: self.params.cast(),
        }
    }
}

impl Rnn<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(ModelKind::Rnn, vec![self.vocab as u32, self.hidden as u32], self)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(ModelKind::Rnn, 2)?;
        let mut m = Rnn::zeroed(c.hyper[0] as usize, c.hyper[1] as usize)?;
        c.restore_into(&mut m)?;
        Ok(m)
    }
}

impl<T: Scalar> HasParams<T> for Rnn<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
}

struct ChunkBatch {
    lanes: Vec<u32>,
    chunk: usize,
}

/// Truncated BPTT over per-location streams. Each batch holds up to
/// `batch_size` streams; streams are walked chunk by chunk (`bptt_steps`
/// targets per chunk) and the hidden state is carried between chunks.
pub fn train_rnn(model: &mut Rnn, corpus: &[QuantizedVideo], cfg: &TrainConfig, valid: &[QuantizedVideo]) -> Result<TrainCurves> {
    let train_streams = streams(corpus, model.vocab)?;
    let valid_streams = streams(valid, model.vocab)?;
    let usable: Vec<u32> = (0..train_streams.len() as u32)
        .filter(|&s| train_streams[s as usize].len() >= 2)
        .collect();
    if usable.is_empty() {
        return Err(Error::InsufficientData("no stream has two or more atoms".into()));
    }
    let steps = cfg.bptt_steps;
    let chunks_of = |s: u32| (train_streams[s as usize].len() - 1).div_ceil(steps);
    let carried: Mutex<Vec<Vec<f32>>> = Mutex::new(vec![Vec::new(); train_streams.len()]);
    let zeros = model.params().zeros_like();
    fit(
        model,
        cfg,
        |_, rng: &mut DetRng| {
            let mut order = usable.clone();
            order.shuffle(rng);
            if let Some(m) = cfg.max_examples_per_epoch {
                let mut total = 0;
                let keep = order
                    .iter()
                    .take_while(|&&s| {
                        total += chunks_of(s);
                        total <= m
                    })
                    .count()
                    .max(1);
                order.truncate(keep);
            }
            let mut batches = Vec::new();
            for group in order.chunks(cfg.batch_size) {
                let most = group.iter().map(|&s| chunks_of(s)).max().unwrap();
                for chunk in 0..most {
                    batches.push(ChunkBatch {
                        lanes: group.iter().copied().filter(|&s| chunk < chunks_of(s)).collect(),
                        chunk,
                    });
                }
            }
            batches
        },
        |m, b| {
            parallel_batch_grad(
                &b.lanes,
                || zeros.clone(),
                |lanes, g| {
                    let mut nats = 0.0;
                    let mut count = 0;
                    for &s in lanes {
                        let seq = &train_streams[s as usize];
                        let start = b.chunk * steps;
                        let end = (start + steps + 1).min(seq.len());
                        let h0 = if b.chunk == 0 {
                            m.initial_state()
                        } else {
                            carried.lock().unwrap()[s as usize].clone()
                        };
                        let (l, fin) = m.bptt(&seq[start..end], &h0, g)?;
                        carried.lock().unwrap()[s as usize] = fin;
                        nats += l;
                        count += end - start - 1;
                    }
                    Ok((nats, count))
                },
            )
        },
        |m| {
            let (mut nats, mut n) = (0.0, 0);
            for s in &valid_streams {
                let (a, b) = m.stream_nats(s)?;
                nats += a;
                n += b;
            }
            Ok(if n == 0 { f64::INFINITY } else { nats / n as f64 / LN_2 })
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gradient_check, GradCheckConfig};

    #[test]
    fn hidden_units_stay_in_open_unit_interval() {
        let mut m = Rnn::<f64>::new(9, 6, 3).unwrap();
        m.params_mut().get_mut(REC).scale(4.0);
        let mut h = m.initial_state();
        assert!(h.iter().all(|&v| v == INITIAL_HIDDEN));
        for x in [0, 8, 3, 3, 1] {
            h = m.step(&h, x).unwrap().0;
            assert!(h.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn severed_recurrence_ignores_history() {
        let mut m = Rnn::<f64>::new(5, 4, 4).unwrap();
        m.params_mut().get_mut(REC).fill(0.0);
        for (i, v) in m.params_mut().get_mut(OW).data_mut().iter_mut().enumerate() {
            *v = (i % 7) as f64 * 0.1 - 0.3;
        }
        let run = |hist: &[u32]| {
            let mut h = m.initial_state();
            let mut lp = vec![];
            for &x in hist {
                let r = m.step(&h, x).unwrap();
                h = r.0;
                lp = r.1;
            }
            lp
        };
        assert_eq!(run(&[0, 1, 2, 4]), run(&[3, 3, 0, 4]));
    }

    #[test]
    fn eight_step_bptt_matches_finite_differences() {
        let mut m = Rnn::<f64>::new(15, 6, 5).unwrap();
        for (i, v) in m.params_mut().get_mut(OW).data_mut().iter_mut().enumerate() {
            *v = ((i * 13 % 9) as f64 - 4.0) * 0.1;
        }
        let seq = [3u32, 14, 0, 7, 7, 2, 9, 11, 5];
        let h0: Vec<f64> = (0..6).map(|i| 0.2 + 0.1 * i as f64).collect();
        let mut g = m.params().zeros_like();
        m.bptt(&seq, &h0, &mut g).unwrap();
        let report = gradient_check(
            &mut m,
            &g,
            |m| {
                let mut scratch = m.params().zeros_like();
                Ok(m.bptt(&seq, &h0, &mut scratch)?.0)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn bptt_loss_agrees_with_stepping() {
        let m = Rnn::<f64>::new(6, 3, 1).unwrap();
        let seq = [1u32, 2, 5, 0];
        let mut g = m.params().zeros_like();
        let (nats, _) = m.bptt(&seq, &m.initial_state(), &mut g).unwrap();
        let (want, n) = m.stream_nats(&seq).unwrap();
        assert_eq!(n, 3);
        assert!((nats - want).abs() < 1e-12);
    }
}
