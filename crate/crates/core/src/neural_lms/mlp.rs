use crate::error::{check_index, Error, Result};
use crate::numerics::{
    gemm, glorot, log_softmax_f64, relu_backward_in_place, relu_in_place, softmax_xent_raw, DetRng, HasParams, Mat,
    ParamSet, Scalar, Tensor,
};

const EMB: usize = 0;
const W1: usize = 1;
const B1: usize = 2;
const W2: usize = 3;
const B2: usize = 4;

/// Embeds `slots` atoms, concatenates the embeddings, and maps them through
/// one ReLU hidden layer to `V` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedMlp<T: Scalar = f32> {
    pub vocab: usize,
    pub slots: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    params: ParamSet<T>,
}

struct Cache<T> {
    x: Vec<T>,
    h: Vec<T>,
    logits: Vec<T>,
}

impl<T: Scalar> EmbedMlp<T> {
    /// Glorot-uniform embedding and hidden weights; the output layer starts
    /// at zero so the initial prediction is uniform.
    pub fn new(vocab: usize, slots: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeroed(vocab, slots, embed_dim, hidden_dim)?;
        let mut rng = DetRng::new(seed).split("mlp");
        *m.params.get_mut(EMB) = glorot(&[vocab, embed_dim], vocab, embed_dim, &mut rng);
        *m.params.get_mut(W1) = glorot(&[hidden_dim, slots * embed_dim], slots * embed_dim, hidden_dim, &mut rng);
        Ok(m)
    }

    pub fn zeroed(vocab: usize, slots: usize, embed_dim: usize, hidden_dim: usize) -> Result<Self> {
        if vocab == 0 || slots == 0 || embed_dim == 0 || hidden_dim == 0 {
            return Err(Error::contract("vocab, slots, embed_dim and hidden_dim must be positive"));
        }
        let mut p = ParamSet::new();
        p.push("embed", Tensor::zeros(&[vocab, embed_dim]));
        p.push("hidden.w", Tensor::zeros(&[hidden_dim, slots * embed_dim]));
        p.push("hidden.b", Tensor::zeros(&[hidden_dim]));
        p.push("out.w", Tensor::zeros(&[vocab, hidden_dim]));
        p.push("out.b", Tensor::zeros(&[vocab]));
        Ok(EmbedMlp {
            vocab,
            slots,
            embed_dim,
            hidden_dim,
            params: p,
        })
    }

    pub fn embedding(&self) -> &Tensor<T> {
        self.params.get(EMB)
    }

    fn check(&self, inputs: &[u32]) -> Result<usize> {
        if inputs.len() % self.slots != 0 {
            return Err(Error::dim(format!(
                "{} input atoms is not a multiple of {} slots",
                inputs.len(),
                self.slots
            )));
        }
        for &a in inputs {
            check_index("atom", a as usize, self.vocab)?;
        }
        Ok(inputs.len() / self.slots)
    }

    fn forward(&self, inputs: &[u32], b: usize) -> Cache<T> {
        let (e, s, hd, v) = (self.embed_dim, self.slots, self.hidden_dim, self.vocab);
        let emb = self.params.get(EMB);
        let mut x = Vec::with_capacity(b * s * e);
        for &a in inputs {
            x.extend_from_slice(emb.row(a as usize));
        }
        let mut h = Vec::with_capacity(b * hd);
        for _ in 0..b {
            h.extend_from_slice(self.params.get(B1).data());
        }
        gemm(
            Mat::new(&x, b, s * e),
            Mat::t(self.params.get(W1).data(), hd, s * e),
            &mut h,
            T::one(),
        );
        relu_in_place(&mut h);
        let mut logits = Vec::with_capacity(b * v);
        for _ in 0..b {
            logits.extend_from_slice(self.params.get(B2).data());
        }
        gemm(
            Mat::new(&h, b, hd),
            Mat::t(self.params.get(W2).data(), v, hd),
            &mut logits,
            T::one(),
        );
        Cache { x, h, logits }
    }

    /// Raw logits, `B × V`, for `B × slots` input atoms.
    pub fn logits(&self, inputs: &[u32]) -> Result<Vec<T>> {
        let b = self.check(inputs)?;
        Ok(self.forward(inputs, b).logits)
    }

    /// Natural-log probabilities, `B × V`.
    pub fn log_probs(&self, inputs: &[u32]) -> Result<Vec<f64>> {
        let b = self.check(inputs)?;
        let c = self.forward(inputs, b);
        let mut out = vec![0.0; b * self.vocab];
        for (o, l) in out.chunks_exact_mut(self.vocab).zip(c.logits.chunks_exact(self.vocab)) {
            log_softmax_f64(l, o);
        }
        Ok(out)
    }

    /// Summed cross-entropy (nats) of `targets`; adds the gradient of the
    /// summed loss into `grads`.
    pub fn loss_grad(&self, inputs: &[u32], targets: &[u32], grads: &mut [Tensor<T>]) -> Result<f64> {
        let b = self.check(inputs)?;
        if targets.len() != b {
            return Err(Error::dim(format!("{} targets for {b} examples", targets.len())));
        }
        for &t in targets {
            check_index("target", t as usize, self.vocab)?;
        }
        let v = self.vocab;
        let c = self.forward(inputs, b);
        let mut dlog = vec![T::zero(); b * v];
        let mut loss = 0.0;
        for r in 0..b {
            loss += softmax_xent_raw(
                &c.logits[r * v..(r + 1) * v],
                targets[r] as usize,
                T::one(),
                &mut dlog[r * v..(r + 1) * v],
            );
        }
        self.backward(inputs, b, &c, &dlog, grads);
        Ok(loss)
    }

    fn backward(&self, inputs: &[u32], b: usize, c: &Cache<T>, dlog: &[T], grads: &mut [Tensor<T>]) {
        let (e, s, hd, v) = (self.embed_dim, self.slots, self.hidden_dim, self.vocab);
        gemm(Mat::t(dlog, b, v), Mat::new(&c.h, b, hd), grads[W2].data_mut(), T::one());
        for r in dlog.chunks_exact(v) {
            for (g, &d) in grads[B2].data_mut().iter_mut().zip(r) {
                *g += d;
            }
        }
        let mut dh = vec![T::zero(); b * hd];
        gemm(Mat::new(dlog, b, v), Mat::new(self.params.get(W2).data(), v, hd), &mut dh, T::zero());
        relu_backward_in_place(&c.h, &mut dh);
        gemm(Mat::t(&dh, b, hd), Mat::new(&c.x, b, s * e), grads[W1].data_mut(), T::one());
        for r in dh.chunks_exact(hd) {
            for (g, &d) in grads[B1].data_mut().iter_mut().zip(r) {
                *g += d;
            }
        }
        let mut dx = vec![T::zero(); b * s * e];
        gemm(
            Mat::new(&dh, b, hd),
            Mat::new(self.params.get(W1).data(), hd, s * e),
            &mut dx,
            T::zero(),
        );
        let ge = grads[EMB].data_mut();
        for (k, &a) in inputs.iter().enumerate() {
            let row = &mut ge[a as usize * e..(a as usize + 1) * e];
            for (g, &d) in row.iter_mut().zip(&dx[k * e..(k + 1) * e]) {
                *g += d;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> EmbedMlp<U> {
        EmbedMlp {
            vocab: self.vocab,
            slots: self.slots,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            params: self.params.cast(),
        }
    }
}

impl<T: Scalar> HasParams<T> for EmbedMlp<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
}
