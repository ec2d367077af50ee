use std::collections::BTreeSet;
use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::dataio::checkpoint::{Checkpoint, ModelKind};
use crate::error::{check_index, Error, Result};
use crate::neural_lms::{fit, parallel_batch_grad, shuffled_batches, EmbedMlp, TrainConfig, TrainCurves};
use crate::numerics::{argmax, HasParams, ParamSet, Scalar, Tensor};
use crate::quantizer::{decode_grid, encode_video_at, offsets, Codebook, QuantizedVideo, ShiftAccumulator, Video};

/// Two 3×3 neighbourhoods, from the frames before and after the target.
pub const FILL_SLOTS: usize = 18;
/// Width in cells of the border ring assumed known in every frame.
pub const FILL_RING: usize = 2;
pub const DEFAULT_FILL_ITERS: usize = 10;
pub const DEFAULT_FILL_HIDDEN: usize = 256;

const EVAL_CHUNK: usize = 1024;

/// Predicts the atom at `(t, i, j)` from the 3×3 neighbourhoods around
/// `(i, j)` in frames `t − 1` and `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FillingModel<T: Scalar = f32> {
    mlp: EmbedMlp<T>,
}

impl<T: Scalar> FillingModel<T> {
    pub fn new(vocab: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        Ok(FillingModel {
            mlp: EmbedMlp::new(vocab, FILL_SLOTS, embed_dim, hidden_dim, seed)?,
        })
    }

    pub fn zeroed(vocab: usize, embed_dim: usize, hidden_dim: usize) -> Result<Self> {
        Ok(FillingModel {
            mlp: EmbedMlp::zeroed(vocab, FILL_SLOTS, embed_dim, hidden_dim)?,
        })
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

    /// Appends the 18 context atoms of `(t, i, j)`; needs `1 ≤ t < T − 1` and
    /// an interior cell.
    pub fn push_context(video: &QuantizedVideo, t: usize, i: usize, j: usize, out: &mut Vec<u32>) {
        for f in [t - 1, t + 1] {
            for a in i - 1..=i + 1 {
                for b in j - 1..=j + 1 {
                    out.push(video.get(f, a, b));
                }
            }
        }
    }

    /// Natural-log distributions for back-to-back 18-atom contexts.
    pub fn log_probs(&self, contexts: &[u32]) -> Result<Vec<f64>> {
        if contexts.len() % FILL_SLOTS != 0 {
            return Err(Error::dim(format!("contexts must come in groups of {FILL_SLOTS}")));
        }
        self.mlp.log_probs(contexts)
    }

    /// Summed nats over the examples `(video, t, i, j)`, adding the gradient
    /// into `grads`.
    pub fn loss_grad(&self, corpus: &[QuantizedVideo], examples: &[FillExample], grads: &mut [Tensor<T>]) -> Result<f64> {
        let mut inputs = Vec::with_capacity(examples.len() * FILL_SLOTS);
        let mut targets = Vec::with_capacity(examples.len());
        for e in examples {
            let v = &corpus[e.video as usize];
            let (t, i, j) = (e.t as usize, e.i as usize, e.j as usize);
            Self::push_context(v, t, i, j, &mut inputs);
            targets.push(v.get(t, i, j));
        }
        self.mlp.loss_grad(&inputs, &targets, grads)
    }

    /// Summed nats and count over every example of `corpus`.
    pub fn corpus_nats(&self, corpus: &[QuantizedVideo]) -> Result<(f64, usize)> {
        let ex = fill_examples(corpus);
        let mut nats = 0.0;
        for chunk in ex.chunks(EVAL_CHUNK) {
            let mut inputs = Vec::with_capacity(chunk.len() * FILL_SLOTS);
            for e in chunk {
                Self::push_context(&corpus[e.video as usize], e.t as usize, e.i as usize, e.j as usize, &mut inputs);
            }
            let lp = self.mlp.log_probs(&inputs)?;
            for (k, e) in chunk.iter().enumerate() {
                let target = corpus[e.video as usize].get(e.t as usize, e.i as usize, e.j as usize);
                nats -= lp[k * self.vocab() + target as usize];
            }
        }
        Ok((nats, ex.len()))
    }

    pub fn cast<U: Scalar>(&self) -> FillingModel<U> {
        FillingModel { mlp: self.mlp.cast() }
    }
}

impl FillingModel<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            ModelKind::Fill,
            vec![self.vocab() as u32, self.embed_dim() as u32, self.hidden_dim() as u32],
            self,
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(ModelKind::Fill, 3)?;
        let mut m = FillingModel::zeroed(c.hyper[0] as usize, c.hyper[1] as usize, c.hyper[2] as usize)?;
        c.restore_into(&mut m)?;
        Ok(m)
    }
}

impl<T: Scalar> HasParams<T> for FillingModel<T> {
    fn params(&self) -> &ParamSet<T> {
        self.mlp.params()
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        self.mlp.params_mut()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FillExample {
    pub video: u32,
    pub t: u16,
    pub i: u16,
    pub j: u16,
}

/// Every middle frame and interior cell of every video.
pub fn fill_examples(corpus: &[QuantizedVideo]) -> Vec<FillExample> {
    let mut out = Vec::new();
    for (vi, v) in corpus.iter().enumerate() {
        for t in 1..v.t.saturating_sub(1) {
            for i in 1..v.hc.saturating_sub(1) {
                for j in 1..v.wc.saturating_sub(1) {
                    out.push(FillExample {
                        video: vi as u32,
                        t: t as u16,
                        i: i as u16,
                        j: j as u16,
                    });
                }
            }
        }
    }
    out
}

pub fn train_filling_model(
    model: &mut FillingModel,
    corpus: &[QuantizedVideo],
    cfg: &TrainConfig,
    valid: &[QuantizedVideo],
) -> Result<TrainCurves> {
    for v in corpus.iter().chain(valid) {
        if v.k > model.vocab() {
            return Err(Error::contract(format!(
                "corpus uses a {}-atom codebook, model has {} outputs",
                v.k,
                model.vocab()
            )));
        }
        if v.t > u16::MAX as usize || v.hc > u16::MAX as usize || v.wc > u16::MAX as usize {
            return Err(Error::dim("video too large for the filling example index"));
        }
    }
    let examples = fill_examples(corpus);
    if examples.is_empty() {
        return Err(Error::InsufficientData("filling needs videos of at least 3 frames and 3x3 cells".into()));
    }
    let zeros = model.params().zeros_like();
    fit(
        model,
        cfg,
        |_, rng| shuffled_batches(&examples, cfg, rng),
        |m, batch| {
            parallel_batch_grad(
                batch,
                || zeros.clone(),
                |chunk, g| Ok((m.loss_grad(corpus, chunk, g)?, chunk.len())),
            )
        },
        |m| {
            let (nats, n) = m.corpus_nats(valid)?;
            Ok(if n == 0 { f64::INFINITY } else { nats / n as f64 / LN_2 })
        },
    )
}

/// Nearest known atom in time at `(i, j)`, preferring the earlier frame on
/// ties.
fn nearest_known(video: &QuantizedVideo, missing: &[bool], t: usize, i: usize, j: usize) -> Option<u32> {
    let cell = |s: usize| (s * video.hc + i) * video.wc + j;
    for d in 1..video.t {
        if d <= t && !missing[cell(t - d)] {
            return Some(video.get(t - d, i, j));
        }
        if t + d < video.t && !missing[cell(t + d)] {
            return Some(video.get(t + d, i, j));
        }
    }
    None
}

/// Fills the `missing` cells `(t, i, j)`: each starts as the nearest known
/// atom in time, then every iteration re-predicts all of them at once from
/// the previous iteration's estimates. Known cells are never changed.
pub fn fill<T: Scalar>(
    model: &FillingModel<T>,
    video: &QuantizedVideo,
    missing: &[(usize, usize, usize)],
    iters: usize,
) -> Result<QuantizedVideo> {
    if video.k > model.vocab() {
        return Err(Error::contract("video codebook is larger than the model vocabulary"));
    }
    let set: BTreeSet<(usize, usize, usize)> = missing.iter().copied().collect();
    let mut mask = vec![false; video.atoms.len()];
    for &(t, i, j) in &set {
        check_index("frame", t, video.t)?;
        check_index("row", i, video.hc)?;
        check_index("column", j, video.wc)?;
        if t == 0 || t + 1 >= video.t {
            return Err(Error::contract(format!(
                "missing cell in frame {t} has no frame on both sides"
            )));
        }
        if i < FILL_RING || j < FILL_RING || i + FILL_RING >= video.hc || j + FILL_RING >= video.wc {
            return Err(Error::contract(format!(
                "cell ({i}, {j}) lies on the known {FILL_RING}-cell border ring"
            )));
        }
        mask[(t * video.hc + i) * video.wc + j] = true;
    }
    let cells: Vec<_> = set.into_iter().collect();
    let mut out = video.clone();
    for &(t, i, j) in &cells {
        let a = nearest_known(video, &mask, t, i, j)
            .ok_or_else(|| Error::contract(format!("no known atom at cell ({i}, {j}) in any frame")))?;
        out.set(t, i, j, a);
    }
    let v = model.vocab();
    for _ in 0..iters {
        let mut next = Vec::with_capacity(cells.len());
        for chunk in cells.chunks(EVAL_CHUNK) {
            let mut inputs = Vec::with_capacity(chunk.len() * FILL_SLOTS);
            for &(t, i, j) in chunk {
                FillingModel::<T>::push_context(&out, t, i, j, &mut inputs);
            }
            let lp = model.log_probs(&inputs)?;
            next.extend(lp.chunks_exact(v).map(|r| argmax(r) as u32));
        }
        for (&(t, i, j), a) in cells.iter().zip(next) {
            out.set(t, i, j, a);
        }
    }
    Ok(out)
}

/// Replaces the frames in `missing_frames` by filling every cell inside the
/// known border ring at each patch offset and shift-averaging the decoded
/// results. The border ring of the missing frames is read from `video`.
pub fn fill_frames<T: Scalar>(
    model: &FillingModel<T>,
    video: &Video,
    missing_frames: &[usize],
    codebook: &Codebook,
    iters: usize,
) -> Result<Video> {
    let frames: BTreeSet<usize> = missing_frames.iter().copied().collect();
    for &t in &frames {
        check_index("frame", t, video.t)?;
    }
    let (ph, pw) = (codebook.patch_h(), codebook.patch_w());
    let offs: Vec<_> = offsets(ph, pw).collect();
    let filled: Vec<_> = offs
        .par_iter()
        .map(|&(dy, dx)| {
            let q = encode_video_at(video, codebook, dy, dx)?;
            let mut cells = Vec::new();
            for &t in &frames {
                for i in FILL_RING..q.hc.saturating_sub(FILL_RING) {
                    for j in FILL_RING..q.wc.saturating_sub(FILL_RING) {
                        cells.push((t, i, j));
                    }
                }
            }
            fill(model, &q, &cells, iters)
        })
        .collect::<Result<_>>()?;
    let mut pixels = video.pixels.clone();
    let n = video.h * video.w;
    for &t in &frames {
        let mut acc = ShiftAccumulator::new(video.h, video.w);
        for (&(dy, dx), q) in offs.iter().zip(&filled) {
            let px = decode_grid(&q.grid(t), codebook)?;
            acc.add_block(dy, dx, &px, q.hc * ph, q.wc * pw)?;
        }
        pixels[t * n..(t + 1) * n].copy_from_slice(&acc.finish()?);
    }
    Video::with_norm(video.t, video.h, video.w, pixels, video.norm_std)
}

/// Per-pixel linear interpolation in time between the nearest known frames
/// on either side of each missing frame.
pub fn linear_interpolation_baseline(video: &Video, missing_frames: &[usize]) -> Result<Video> {
    let mut missing = vec![false; video.t];
    for &t in missing_frames {
        check_index("frame", t, video.t)?;
        missing[t] = true;
    }
    let n = video.h * video.w;
    let mut pixels = video.pixels.clone();
    for t in (0..video.t).filter(|&t| missing[t]) {
        let before = (0..t).rev().find(|&s| !missing[s]);
        let after = (t + 1..video.t).find(|&s| !missing[s]);
        let (Some(a), Some(b)) = (before, after) else {
            return Err(Error::contract(format!("missing frame {t} has no known frame on both sides")));
        };
        let w = (t - a) as f64 / (b - a) as f64;
        let (fa, fb) = (video.frame(a), video.frame(b));
        for (k, p) in pixels[t * n..(t + 1) * n].iter_mut().enumerate() {
            *p = (fa[k] as f64 + w * (fb[k] as f64 - fa[k] as f64)) as f32;
        }
    }
    Video::with_norm(video.t, video.h, video.w, pixels, video.norm_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gradient_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};

    fn random_video(t: usize, hc: usize, wc: usize, k: usize, seed: u64) -> QuantizedVideo {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let atoms = (0..t * hc * wc).map(|_| r.gen_range(0..k as u32)).collect();
        QuantizedVideo::new(t, hc, wc, k, atoms).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = FillingModel::<f64>::new(12, 3, 5, 4).unwrap();
        for (i, v) in m.params_mut().get_mut(3).data_mut().iter_mut().enumerate() {
            *v = ((i * 29 % 13) as f64 - 6.0) * 0.04;
        }
        let corpus = vec![random_video(4, 4, 5, 12, 1)];
        let ex = fill_examples(&corpus);
        assert_eq!(ex.len(), 2 * 2 * 3);
        let mut g = m.params().zeros_like();
        m.loss_grad(&corpus, &ex, &mut g).unwrap();
        let report = gradient_check(
            &mut m,
            &g,
            |m| {
                let mut s = m.params().zeros_like();
                m.loss_grad(&corpus, &ex, &mut s)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn context_layout() {
        let v = QuantizedVideo::new(3, 3, 3, 27, (0..27).collect()).unwrap();
        let mut c = Vec::new();
        FillingModel::<f32>::push_context(&v, 1, 1, 1, &mut c);
        let expect: Vec<u32> = (0..9).chain(18..27).collect();
        assert_eq!(c, expect);
    }

    #[test]
    fn no_missing_cells_is_identity_and_ring_is_protected() {
        let m = FillingModel::<f32>::new(8, 2, 3, 1).unwrap();
        let v = random_video(5, 6, 7, 8, 2);
        assert_eq!(fill(&m, &v, &[], 10).unwrap(), v);
        assert!(matches!(fill(&m, &v, &[(2, 1, 3)], 1), Err(Error::Contract(_))));
        assert!(matches!(fill(&m, &v, &[(2, 2, 5)], 1), Err(Error::Contract(_))));
        assert!(matches!(fill(&m, &v, &[(4, 2, 2)], 1), Err(Error::Contract(_))));
        assert!(matches!(fill(&m, &v, &[(9, 2, 2)], 1), Err(Error::Index { .. })));
    }

    #[test]
    fn initialization_uses_nearest_frame_with_earlier_ties() {
        // zero iterations exposes the initial estimate
        let m = FillingModel::<f32>::zeroed(40, 2, 2).unwrap();
        let mut atoms = vec![0u32; 6 * 25];
        for t in 0..6 {
            atoms[t * 25 + 12] = 10 + t as u32;
        }
        let v = QuantizedVideo::new(6, 5, 5, 40, atoms).unwrap();
        let out = fill(&m, &v, &[(1, 2, 2), (2, 2, 2), (3, 2, 2)], 0).unwrap();
        assert_eq!(out.get(1, 2, 2), 10);
        assert_eq!(out.get(2, 2, 2), 10);
        assert_eq!(out.get(3, 2, 2), 14);
        assert_eq!(out.get(4, 2, 2), 14);
    }

    #[test]
    fn known_cells_never_change() {
        let m = FillingModel::<f32>::new(8, 2, 3, 5).unwrap();
        let v = random_video(5, 6, 6, 8, 3);
        let miss = [(2, 2, 2), (2, 3, 3), (3, 2, 3)];
        let out = fill(&m, &v, &miss, 4).unwrap();
        for t in 0..5 {
            for i in 0..6 {
                for j in 0..6 {
                    if !miss.contains(&(t, i, j)) {
                        assert_eq!(out.get(t, i, j), v.get(t, i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn linear_interpolation_schedule() {
        let mut px = vec![0.0f32; 5 * 4];
        px[16..20].fill(100.0);
        let v = Video::new(5, 2, 2, px).unwrap();
        let out = linear_interpolation_baseline(&v, &[1, 2, 3]).unwrap();
        assert_eq!(out.frame(1), &[25.0; 4]);
        assert_eq!(out.frame(2), &[50.0; 4]);
        assert_eq!(out.frame(3), &[75.0; 4]);
        let one = linear_interpolation_baseline(&v, &[3]).unwrap();
        assert_eq!(one.frame(3), &[50.0; 4]);
        assert!(matches!(linear_interpolation_baseline(&v, &[4]), Err(Error::Contract(_))));
        assert!(matches!(linear_interpolation_baseline(&v, &[0]), Err(Error::Contract(_))));
    }
}
