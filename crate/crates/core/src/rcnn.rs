//! Recurrent convolutional next-frame model. Atoms are embedded, encoded by
//! two valid 3×3 convolutions, merged with the previous recurrent code by a
//! 1×1 convolution, and decoded by two more 3×3 convolutions into one
//! distribution over the dictionary per interior cell.

use std::f64::consts::LN_2;

use rand::Rng;

use crate::dataio::checkpoint::{Checkpoint, ModelKind};
use crate::error::{check_index, Error, Result};
use crate::neural_lms::{fit, parallel_batch_grad, shuffled_batches, TrainConfig, TrainCurves};
use crate::numerics::{
    conv2d_backward_raw, conv2d_forward_raw, gemm, glorot, glorot_logistic, log_softmax_f64, logistic_backward_in_place,
    logistic_in_place, softmax_xent_raw, ConvGeom, ConvScratch, DetRng, HasParams, Mat, ParamSet, Scalar, Tensor,
};
use crate::quantizer::QuantizedVideo;

/// Value of every entry of the recurrent code before the first frame.
pub const INITIAL_CODE: f64 = 0.0;
/// Cells lost at each border by the encoder (two valid 3×3 convolutions).
pub const CODE_MARGIN: usize = 2;
/// Cells at each border without a prediction.
pub const RCNN_MARGIN: usize = 4;
/// Smallest grid with one predicted cell.
pub const MIN_GRID: usize = 2 * RCNN_MARGIN + 1;

const EMB: usize = 0;
const ENC1: usize = 1;
const ENC2: usize = 3;
const REC: usize = 5;
const DEC1: usize = 7;
const DEC2: usize = 9;
const OUT_W: usize = 11;
const OUT_B: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct Rcnn<T: Scalar = f32> {
    vocab: usize,
    embed_dim: usize,
    maps: usize,
    params: ParamSet<T>,
}

/// `maps × h × w` recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentCode<T = f32> {
    pub maps: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

/// Logits for each predicted cell, cell-major (`h·w` rows of `vocab`).
/// Cell `(i, j)` predicts atom `(i + 4, j + 4)` of the next frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitGrid<T = f32> {
    pub h: usize,
    pub w: usize,
    pub vocab: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> LogitGrid<T> {
    pub fn cell(&self, i: usize, j: usize) -> &[T] {
        let c = i * self.w + j;
        &self.data[c * self.vocab..(c + 1) * self.vocab]
    }

    /// Most likely atom per cell, ties to the lowest index.
    pub fn argmax(&self) -> Vec<u32> {
        self.data
            .chunks_exact(self.vocab)
            .map(|r| crate::numerics::argmax(r) as u32)
            .collect()
    }
}

struct Geoms {
    enc1: ConvGeom,
    enc2: ConvGeom,
    rec: ConvGeom,
    dec1: ConvGeom,
    dec2: ConvGeom,
}

struct StepCache<T> {
    x0: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
    cat: Vec<T>,
    code: Vec<T>,
    d1: Vec<T>,
    d2: Vec<T>,
    logits: Vec<T>,
}

impl<T: Scalar> Rcnn<T> {
    pub fn zeroed(vocab: usize, embed_dim: usize, maps: usize) -> Result<Self> {
        if vocab == 0 || embed_dim == 0 || maps == 0 {
            return Err(Error::contract("vocab, embed_dim and maps must be positive"));
        }
        let mut p = ParamSet::new();
        p.push("embed", Tensor::zeros(&[vocab, embed_dim]));
        p.push("enc1.w", Tensor::zeros(&[maps, embed_dim, 3, 3]));
        p.push("enc1.b", Tensor::zeros(&[maps]));
        p.push("enc2.w", Tensor::zeros(&[maps, maps, 3, 3]));
        p.push("enc2.b", Tensor::zeros(&[maps]));
        p.push("rec.w", Tensor::zeros(&[maps, 2 * maps, 1, 1]));
        p.push("rec.b", Tensor::zeros(&[maps]));
        p.push("dec1.w", Tensor::zeros(&[maps, maps, 3, 3]));
        p.push("dec1.b", Tensor::zeros(&[maps]));
        p.push("dec2.w", Tensor::zeros(&[maps, maps, 3, 3]));
        p.push("dec2.b", Tensor::zeros(&[maps]));
        p.push("out.w", Tensor::zeros(&[vocab, maps]));
        p.push("out.b", Tensor::zeros(&[vocab]));
        Ok(Rcnn {
            vocab,
            embed_dim,
            maps,
            params: p,
        })
    }

    /// Glorot-uniform embedding and convolutions; zero biases and output layer.
    pub fn new(vocab: usize, embed_dim: usize, maps: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeroed(vocab, embed_dim, maps)?;
        let mut rng = DetRng::new(seed).split("rcnn");
        let (e, c) = (embed_dim, maps);
        *m.params.get_mut(EMB) = glorot(&[vocab, e], vocab, e, &mut rng);
        *m.params.get_mut(ENC1) = glorot_logistic(&[c, e, 3, 3], e * 9, c * 9, &mut rng);
        *m.params.get_mut(ENC2) = glorot_logistic(&[c, c, 3, 3], c * 9, c * 9, &mut rng);
        *m.params.get_mut(REC) = glorot_logistic(&[c, 2 * c, 1, 1], 2 * c, c, &mut rng);
        *m.params.get_mut(DEC1) = glorot_logistic(&[c, c, 3, 3], c * 9, c * 9, &mut rng);
        *m.params.get_mut(DEC2) = glorot_logistic(&[c, c, 3, 3], c * 9, c * 9, &mut rng);
        Ok(m)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn embedding(&self) -> &Tensor<T> {
        self.params.get(EMB)
    }

    pub fn initial_code(&self, hc: usize, wc: usize) -> Result<RecurrentCode<T>> {
        check_grid(hc, wc)?;
        let (h, w) = (hc - 2 * CODE_MARGIN, wc - 2 * CODE_MARGIN);
        Ok(RecurrentCode {
            maps: self.maps,
            h,
            w,
            data: vec![T::lit(INITIAL_CODE); self.maps * h * w],
        })
    }

    fn geoms(&self, hc: usize, wc: usize) -> Geoms {
        let (e, m) = (self.embed_dim, self.maps);
        let g = |c_in, h, w, c_out, k| ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh: k,
            kw: k,
        };
        Geoms {
            enc1: g(e, hc, wc, m, 3),
            enc2: g(m, hc - 2, wc - 2, m, 3),
            rec: g(2 * m, hc - 4, wc - 4, m, 1),
            dec1: g(m, hc - 4, wc - 4, m, 3),
            dec2: g(m, hc - 6, wc - 6, m, 3),
        }
    }

    fn embed(&self, atoms: &[u32], n: usize) -> Vec<T> {
        let e = self.embed_dim;
        let emb = self.params.get(EMB).data();
        let mut x = vec![T::zero(); e * n];
        for (cell, &a) in atoms.iter().enumerate() {
            let row = &emb[a as usize * e..(a as usize + 1) * e];
            for (c, &v) in row.iter().enumerate() {
                x[c * n + cell] = v;
            }
        }
        x
    }

    fn conv(&self, g: &ConvGeom, input: &[T], k: usize, scratch: &mut ConvScratch<T>) -> Vec<T> {
        let mut out = vec![T::zero(); g.out_len()];
        conv2d_forward_raw(
            g,
            input,
            self.params.get(k).data(),
            self.params.get(k + 1).data(),
            &mut out,
            scratch,
        );
        logistic_in_place(&mut out);
        out
    }

    fn step(&self, g: &Geoms, atoms: &[u32], prev: &[T], scratch: &mut ConvScratch<T>) -> StepCache<T> {
        let x0 = self.embed(atoms, g.enc1.h * g.enc1.w);
        let a1 = self.conv(&g.enc1, &x0, ENC1, scratch);
        let a2 = self.conv(&g.enc2, &a1, ENC2, scratch);
        let mut cat = Vec::with_capacity(a2.len() * 2);
        cat.extend_from_slice(&a2);
        cat.extend_from_slice(prev);
        let code = self.conv(&g.rec, &cat, REC, scratch);
        let d1 = self.conv(&g.dec1, &code, DEC1, scratch);
        let d2 = self.conv(&g.dec2, &d1, DEC2, scratch);
        let n = g.dec2.out_cells();
        let mut logits = Vec::with_capacity(n * self.vocab);
        for _ in 0..n {
            logits.extend_from_slice(self.params.get(OUT_B).data());
        }
        gemm(
            Mat::t(&d2, self.maps, n),
            Mat::t(self.params.get(OUT_W).data(), self.vocab, self.maps),
            &mut logits,
            T::one(),
        );
        StepCache {
            x0,
            a1,
            a2,
            cat,
            code,
            d1,
            d2,
            logits,
        }
    }

    fn check_atoms(&self, atoms: &[u32], hc: usize, wc: usize) -> Result<()> {
        check_grid(hc, wc)?;
        if atoms.len() != hc * wc {
            return Err(Error::dim(format!("{} atoms for a {hc}x{wc} grid", atoms.len())));
        }
        for &a in atoms {
            check_index("atom", a as usize, self.vocab)?;
        }
        Ok(())
    }

    /// One time step on an `hc × wc` grid.
    pub fn forward(&self, atoms: &[u32], hc: usize, wc: usize, prev: &RecurrentCode<T>) -> Result<(RecurrentCode<T>, LogitGrid<T>)> {
        self.check_atoms(atoms, hc, wc)?;
        let (ch, cw) = (hc - 2 * CODE_MARGIN, wc - 2 * CODE_MARGIN);
        if (prev.maps, prev.h, prev.w) != (self.maps, ch, cw) || prev.data.len() != self.maps * ch * cw {
            return Err(Error::dim(format!(
                "recurrent code is {}x{}x{}, grid needs {}x{ch}x{cw}",
                prev.maps, prev.h, prev.w, self.maps
            )));
        }
        let g = self.geoms(hc, wc);
        let c = self.step(&g, atoms, &prev.data, &mut ConvScratch::default());
        Ok((
            RecurrentCode {
                maps: self.maps,
                h: ch,
                w: cw,
                data: c.code,
            },
            LogitGrid {
                h: hc - 2 * RCNN_MARGIN,
                w: wc - 2 * RCNN_MARGIN,
                vocab: self.vocab,
                data: c.logits,
            },
        ))
    }

    /// Runs every frame of `video` from the initial code; entry `t` predicts
    /// frame `t + 1`.
    pub fn unrolled_predict(&self, video: &QuantizedVideo) -> Result<(Vec<LogitGrid<T>>, RecurrentCode<T>)> {
        let mut code = self.initial_code(video.hc, video.wc)?;
        let mut out = Vec::with_capacity(video.t);
        for t in 0..video.t {
            let (c, l) = self.forward(video.frame(t), video.hc, video.wc, &code)?;
            code = c;
            out.push(l);
        }
        Ok((out, code))
    }

    /// First-layer activations (`maps × (hc−2) × (wc−2)`) of one grid.
    pub fn first_layer(&self, atoms: &[u32], hc: usize, wc: usize) -> Result<Vec<T>> {
        if hc < 3 || wc < 3 || atoms.len() != hc * wc {
            return Err(Error::dim(format!("first layer needs a grid of at least 3x3, got {hc}x{wc}")));
        }
        for &a in atoms {
            check_index("atom", a as usize, self.vocab)?;
        }
        let g = self.geoms(hc.max(MIN_GRID), wc.max(MIN_GRID));
        let g1 = ConvGeom { h: hc, w: wc, ..g.enc1 };
        let x0 = self.embed(atoms, hc * wc);
        Ok(self.conv(&g1, &x0, ENC1, &mut ConvScratch::default()))
    }

    /// Teacher-forced BPTT through `frames.len() − 1` steps from the initial
    /// code. Step `k` reads `frames[k]` and is scored on the interior of
    /// `frames[k + 1]`. Adds the gradient of the summed loss into `grads`;
    /// returns `(nats, predictions)`.
    pub fn bptt(&self, frames: &[&[u32]], hc: usize, wc: usize, grads: &mut [Tensor<T>]) -> Result<(f64, usize)> {
        if frames.len() < 2 {
            return Ok((0.0, 0));
        }
        for f in frames {
            self.check_atoms(f, hc, wc)?;
        }
        let g = self.geoms(hc, wc);
        let mut scratch = ConvScratch::default();
        let (m, v) = (self.maps, self.vocab);
        let steps = frames.len() - 1;
        let mut caches = Vec::with_capacity(steps);
        let mut prev = self.initial_code(hc, wc)?.data;
        for f in &frames[..steps] {
            let c = self.step(&g, f, &prev, &mut scratch);
            prev = c.code.clone();
            caches.push(c);
        }
        let (ph, pw) = (g.dec2.ho(), g.dec2.wo());
        let n = ph * pw;
        let code_n = g.rec.out_cells();
        let mut nats = 0.0;
        let mut carry = vec![T::zero(); m * code_n];
        for k in (0..steps).rev() {
            let c = &caches[k];
            let next = frames[k + 1];
            let mut dlog = vec![T::zero(); n * v];
            for i in 0..ph {
                for j in 0..pw {
                    let cell = i * pw + j;
                    let target = next[(i + RCNN_MARGIN) * wc + j + RCNN_MARGIN] as usize;
                    nats += softmax_xent_raw(
                        &c.logits[cell * v..(cell + 1) * v],
                        target,
                        T::one(),
                        &mut dlog[cell * v..(cell + 1) * v],
                    );
                }
            }
            gemm(
                Mat::t(&dlog, n, v),
                Mat::t(&c.d2, m, n),
                grads[OUT_W].data_mut(),
                T::one(),
            );
            for r in dlog.chunks_exact(v) {
                for (gb, &d) in grads[OUT_B].data_mut().iter_mut().zip(r) {
                    *gb += d;
                }
            }
            let mut dd2 = vec![T::zero(); m * n];
            gemm(
                Mat::t(self.params.get(OUT_W).data(), v, m),
                Mat::t(&dlog, n, v),
                &mut dd2,
                T::zero(),
            );
            logistic_backward_in_place(&c.d2, &mut dd2);
            let mut dd1 = vec![T::zero(); c.d1.len()];
            self.conv_back(&g.dec2, &c.d1, DEC2, &dd2, Some(&mut dd1), grads, &mut scratch);
            logistic_backward_in_place(&c.d1, &mut dd1);
            let mut dcode = std::mem::replace(&mut carry, vec![T::zero(); m * code_n]);
            self.conv_back(&g.dec1, &c.code, DEC1, &dd1, Some(&mut dcode), grads, &mut scratch);
            logistic_backward_in_place(&c.code, &mut dcode);
            let mut dcat = vec![T::zero(); 2 * m * code_n];
            self.conv_back(&g.rec, &c.cat, REC, &dcode, Some(&mut dcat), grads, &mut scratch);
            let (da2, dprev) = dcat.split_at_mut(m * code_n);
            if k > 0 {
                carry.copy_from_slice(dprev);
            }
            logistic_backward_in_place(&c.a2, da2);
            let mut da1 = vec![T::zero(); c.a1.len()];
            self.conv_back(&g.enc2, &c.a1, ENC2, da2, Some(&mut da1), grads, &mut scratch);
            logistic_backward_in_place(&c.a1, &mut da1);
            let mut dx0 = vec![T::zero(); c.x0.len()];
            self.conv_back(&g.enc1, &c.x0, ENC1, &da1, Some(&mut dx0), grads, &mut scratch);
            let cells = hc * wc;
            let e = self.embed_dim;
            let ge = grads[EMB].data_mut();
            for (cell, &a) in frames[k].iter().enumerate() {
                let row = &mut ge[a as usize * e..(a as usize + 1) * e];
                for (ch, gv) in row.iter_mut().enumerate() {
                    *gv += dx0[ch * cells + cell];
                }
            }
        }
        Ok((nats, steps * n))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_back(
        &self,
        g: &ConvGeom,
        input: &[T],
        k: usize,
        grad_out: &[T],
        grad_in: Option<&mut [T]>,
        grads: &mut [Tensor<T>],
        scratch: &mut ConvScratch<T>,
    ) {
        let (gk, rest) = grads[k..].split_at_mut(1);
        conv2d_backward_raw(
            g,
            input,
            self.params.get(k).data(),
            grad_out,
            grad_in,
            gk[0].data_mut(),
            rest[0].data_mut(),
            scratch,
        );
    }

    /// Nats and prediction count over every predicted cell of frames
    /// `1..T` of each video.
    pub fn video_nats(&self, video: &QuantizedVideo) -> Result<(f64, usize)> {
        let (preds, _) = self.unrolled_predict(video)?;
        let mut nats = 0.0;
        let mut n = 0;
        let mut lp = vec![0.0; self.vocab];
        for (t, l) in preds.iter().enumerate().take(video.t.saturating_sub(1)) {
            for i in 0..l.h {
                for j in 0..l.w {
                    log_softmax_f64(l.cell(i, j), &mut lp);
                    nats -= lp[video.get(t + 1, i + RCNN_MARGIN, j + RCNN_MARGIN) as usize];
                    n += 1;
                }
            }
        }
        Ok((nats, n))
    }

    pub fn cast<U: Scalar>(&self) -> Rcnn<U> {
        Rcnn {
            vocab: self.vocab,
            embed_dim: self.embed_dim,
            maps: self.maps,
            params: self.params.cast(),
        }
    }
}

fn check_grid(hc: usize, wc: usize) -> Result<()> {
    if hc < MIN_GRID || wc < MIN_GRID {
        return Err(Error::dim(format!(
            "grid {hc}x{wc} is smaller than {MIN_GRID}x{MIN_GRID}"
        )));
    }
    Ok(())
}

impl Rcnn<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            ModelKind::Rcnn,
            vec![self.vocab as u32, self.embed_dim as u32, self.maps as u32],
            self,
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(ModelKind::Rcnn, 3)?;
        let mut m = Rcnn::zeroed(c.hyper[0] as usize, c.hyper[1] as usize, c.hyper[2] as usize)?;
        c.restore_into(&mut m)?;
        Ok(m)
    }
}

impl<T: Scalar> HasParams<T> for Rcnn<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
}

/// Spatial crop size (in cells) of rCNN training examples; `None` trains on
/// whole frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropSpec {
    pub size: Option<usize>,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec { size: Some(MIN_GRID) }
    }
}

#[derive(Clone, Copy, Debug)]
struct Example {
    video: u32,
    t0: u32,
    i0: u32,
    j0: u32,
}

/// Trains on temporal stacks of `bptt_steps + 1` spatial crops. Each epoch
/// samples one crop location per (video, start frame) window.
pub fn train_rcnn(
    model: &mut Rcnn,
    corpus: &[QuantizedVideo],
    cfg: &TrainConfig,
    crop: CropSpec,
    valid: &[QuantizedVideo],
) -> Result<TrainCurves> {
    let steps = cfg.bptt_steps;
    for v in corpus.iter().chain(valid) {
        if v.k > model.vocab {
            return Err(Error::contract(format!(
                "corpus uses a {}-atom codebook, model has {} outputs",
                v.k, model.vocab
            )));
        }
    }
    let size_of = |v: &QuantizedVideo| match crop.size {
        Some(s) => (s.min(v.hc), s.min(v.wc)),
        None => (v.hc, v.wc),
    };
    let mut windows = Vec::new();
    for (vi, v) in corpus.iter().enumerate() {
        let (ch, cw) = size_of(v);
        if ch < MIN_GRID || cw < MIN_GRID || v.t < 2 {
            continue;
        }
        for t0 in 0..v.t.saturating_sub(steps).max(1) {
            windows.push((vi as u32, t0 as u32));
        }
    }
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no video offers a {MIN_GRID}x{MIN_GRID} grid over two frames"
        )));
    }
    let zeros = model.params().zeros_like();
    fit(
        model,
        cfg,
        |_, rng| {
            let mut batches = shuffled_batches(&windows, cfg, rng);
            batches
                .iter_mut()
                .map(|b| {
                    b.iter()
                        .map(|&(vi, t0)| {
                            let v = &corpus[vi as usize];
                            let (ch, cw) = size_of(v);
                            Example {
                                video: vi,
                                t0,
                                i0: rng.gen_range(0..=v.hc - ch) as u32,
                                j0: rng.gen_range(0..=v.wc - cw) as u32,
                            }
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        },
        |m, batch| {
            parallel_batch_grad(
                batch,
                || zeros.clone(),
                |chunk, g| {
                    let (mut nats, mut n) = (0.0, 0);
                    for ex in chunk {
                        let v = &corpus[ex.video as usize];
                        let (ch, cw) = size_of(v);
                        let t0 = ex.t0 as usize;
                        let t1 = (t0 + steps + 1).min(v.t);
                        let crop = v.crop(ex.i0 as usize, ex.j0 as usize, ch, cw)?;
                        let frames: Vec<&[u32]> = (t0..t1).map(|t| crop.frame(t)).collect();
                        let (l, c) = m.bptt(&frames, ch, cw, g)?;
                        nats += l;
                        n += c;
                    }
                    Ok((nats, n))
                },
            )
        },
        |m| {
            let (mut nats, mut n) = (0.0, 0);
            for v in valid {
                let (a, b) = m.video_nats(v)?;
                nats += a;
                n += b;
            }
            Ok(if n == 0 { f64::INFINITY } else { nats / n as f64 / LN_2 })
        },
    )
}
