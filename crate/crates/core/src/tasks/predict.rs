use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural_lms::{Nnlm, Rnn};
use crate::ngram::NGramModel;
use crate::numerics::{log_softmax_f64, Scalar};
use crate::quantizer::QuantizedVideo;
use crate::rcnn::{Rcnn, RCNN_MARGIN};

/// Callback receiving `(target frame, row, col, natural-log distribution)`.
pub type Visit<'a> = &'a mut dyn FnMut(usize, usize, usize, &[f64]);

/// Anything that assigns a distribution to atoms of a quantized video given
/// the frames before them.
pub trait FramePredictor: Sync {
    fn name(&self) -> String;

    fn vocab(&self) -> usize;

    /// Cells closer than this to the grid border never get a prediction.
    fn margin(&self) -> usize {
        0
    }

    /// First frame index that can be predicted.
    fn min_context(&self) -> usize {
        1
    }

    /// Visits every predictable cell of `video`, in frame then row-major order.
    fn predict_video(&self, video: &QuantizedVideo, visit: Visit) -> Result<()>;
}

fn check_vocab(model: &dyn FramePredictor, v: &QuantizedVideo) -> Result<()> {
    if v.k > model.vocab() {
        return Err(Error::contract(format!(
            "video uses a {}-atom codebook, model {} has {} outputs",
            v.k,
            model.name(),
            model.vocab()
        )));
    }
    Ok(())
}

impl FramePredictor for NGramModel {
    fn name(&self) -> String {
        match self.order() {
            2 => "bigram".into(),
            3 => "trigram".into(),
            n => format!("{n}-gram"),
        }
    }

    fn vocab(&self) -> usize {
        NGramModel::vocab(self)
    }

    fn min_context(&self) -> usize {
        self.order() - 1
    }

    fn predict_video(&self, video: &QuantizedVideo, visit: Visit) -> Result<()> {
        let k = self.order() - 1;
        let mut lp = vec![0.0; NGramModel::vocab(self)];
        let mut ctx = vec![0u32; k];
        for t in k..video.t {
            for i in 0..video.hc {
                for j in 0..video.wc {
                    for (c, slot) in ctx.iter_mut().enumerate() {
                        *slot = video.get(t - k + c, i, j);
                    }
                    self.log_distribution(&ctx, &mut lp)?;
                    visit(t, i, j, &lp);
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> FramePredictor for Nnlm<T> {
    fn name(&self) -> String {
        format!("nn{}", self.order())
    }

    fn vocab(&self) -> usize {
        Nnlm::vocab(self)
    }

    fn min_context(&self) -> usize {
        self.order() - 1
    }

    fn predict_video(&self, video: &QuantizedVideo, visit: Visit) -> Result<()> {
        let k = self.order() - 1;
        let v = Nnlm::vocab(self);
        let cells = video.hc * video.wc;
        let mut ctx = Vec::with_capacity(cells * k);
        for t in k..video.t {
            ctx.clear();
            for i in 0..video.hc {
                for j in 0..video.wc {
                    ctx.extend((t - k..t).map(|s| video.get(s, i, j)));
                }
            }
            let lp = self.log_probs_batch(&ctx)?;
            for (c, row) in lp.chunks_exact(v).enumerate() {
                visit(t, c / video.wc, c % video.wc, row);
            }
        }
        Ok(())
    }
}

impl<T: Scalar> FramePredictor for Rnn<T> {
    fn name(&self) -> String {
        "rnn".into()
    }

    fn vocab(&self) -> usize {
        Rnn::vocab(self)
    }

    fn predict_video(&self, video: &QuantizedVideo, visit: Visit) -> Result<()> {
        let mut states = vec![self.initial_state(); video.hc * video.wc];
        for t in 0..video.t.saturating_sub(1) {
            for i in 0..video.hc {
                for j in 0..video.wc {
                    let c = i * video.wc + j;
                    let (h, lp) = self.step(&states[c], video.get(t, i, j))?;
                    states[c] = h;
                    visit(t + 1, i, j, &lp);
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> FramePredictor for Rcnn<T> {
    fn name(&self) -> String {
        "rcnn".into()
    }

    fn vocab(&self) -> usize {
        Rcnn::vocab(self)
    }

    fn margin(&self) -> usize {
        RCNN_MARGIN
    }

    fn predict_video(&self, video: &QuantizedVideo, visit: Visit) -> Result<()> {
        let (preds, _) = self.unrolled_predict(video)?;
        let mut lp = vec![0.0; Rcnn::vocab(self)];
        for (t, l) in preds.iter().enumerate().take(video.t.saturating_sub(1)) {
            for i in 0..l.h {
                for j in 0..l.w {
                    log_softmax_f64(l.cell(i, j), &mut lp);
                    visit(t + 1, i + RCNN_MARGIN, j + RCNN_MARGIN, &lp);
                }
            }
        }
        Ok(())
    }
}

/// Puts all mass on the atom actually present; the reference point for
/// reconstruction error.
#[derive(Clone, Copy, Debug)]
pub struct OraclePredictor {
    pub vocab: usize,
    pub margin: usize,
}

impl FramePredictor for OraclePredictor {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn vocab(&self) -> usize {
        self.vocab
    }

    fn margin(&self) -> usize {
        self.margin
    }

    fn predict_video(&self, video: &QuantizedVideo, visit: Visit) -> Result<()> {
        let mut lp = vec![f64::NEG_INFINITY; self.vocab];
        for t in 1..video.t {
            for i in self.margin..video.hc.saturating_sub(self.margin) {
                for j in self.margin..video.wc.saturating_sub(self.margin) {
                    let a = video.get(t, i, j) as usize;
                    lp[a] = 0.0;
                    visit(t, i, j, &lp);
                    lp[a] = f64::NEG_INFINITY;
                }
            }
        }
        Ok(())
    }
}

/// One line of evaluation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub bits_per_patch: f64,
    pub perplexity: f64,
    pub rmse_0_255: Option<f64>,
    pub condition: Option<String>,
    pub patch_count: usize,
}

impl EvalReport {
    pub fn new(model: impl Into<String>, split: impl Into<String>, bits_per_patch: f64, patch_count: usize) -> Self {
        EvalReport {
            model: model.into(),
            split: split.into(),
            bits_per_patch,
            perplexity: bits_per_patch.exp2(),
            rmse_0_255: None,
            condition: None,
            patch_count,
        }
    }

    pub fn with_condition(mut self, c: impl Into<String>) -> Self {
        self.condition = Some(c.into());
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report fields are serializable")
    }
}

/// Summed nats and count of predicted cells at least `margin` from the
/// border.
pub fn video_nats(model: &dyn FramePredictor, video: &QuantizedVideo, margin: usize) -> Result<(f64, usize)> {
    check_vocab(model, video)?;
    let (hc, wc) = (video.hc, video.wc);
    let mut nats = 0.0;
    let mut n = 0usize;
    let mut bad = None;
    model.predict_video(video, &mut |t, i, j, lp| {
        if i < margin || j < margin || i + margin >= hc || j + margin >= wc {
            return;
        }
        let l = lp[video.get(t, i, j) as usize];
        if !l.is_finite() && bad.is_none() {
            bad = Some((t, i, j, l));
        }
        nats -= l;
        n += 1;
    })?;
    if let Some((t, i, j, l)) = bad {
        return Err(Error::Numeric(format!(
            "log-probability {l} for the true atom at frame {t}, cell ({i}, {j})"
        )));
    }
    Ok((nats, n))
}

/// Mean bits per predicted atom over the corpus. `margin` widens the border
/// excluded from scoring, so models with different reach can be compared on
/// the same cells.
pub fn evaluate(
    model: &dyn FramePredictor,
    corpus: &[QuantizedVideo],
    split: &str,
    margin: Option<usize>,
) -> Result<EvalReport> {
    let m = model.margin().max(margin.unwrap_or(0));
    let parts = corpus
        .par_iter()
        .map(|v| video_nats(model, v, m))
        .collect::<Result<Vec<_>>>()?;
    let (nats, n) = parts.iter().fold((0.0, 0), |(a, b), &(x, y)| (a + x, b + y));
    if n == 0 {
        return Err(Error::InsufficientData(format!(
            "no predictable cell for {} in split {split}",
            model.name()
        )));
    }
    Ok(EvalReport::new(model.name(), split, nats / n as f64 / LN_2, n))
}
