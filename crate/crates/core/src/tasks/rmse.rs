use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::argmax;
use crate::quantizer::{encode_video_at, offsets, rmse_0_255, Codebook, ShiftAccumulator, Video};

use super::predict::FramePredictor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    /// Shift-averaged most-likely predictions against the true frames.
    pub model_rmse: f64,
    /// Shift-averaged quantization of the true frames over the same cells.
    pub floor_rmse: f64,
    pub pixel_count: usize,
}

/// Predicted atoms `(t, i, j, atom)` at one offset.
fn offset_predictions(
    model: &dyn FramePredictor,
    video: &Video,
    codebook: &Codebook,
    dy: usize,
    dx: usize,
) -> Result<Vec<(u32, u32, u32, u32, u32)>> {
    let q = encode_video_at(video, codebook, dy, dx)?;
    let mut out = Vec::new();
    model.predict_video(&q, &mut |t, i, j, lp| {
        out.push((t as u32, i as u32, j as u32, argmax(lp) as u32, q.get(t, i, j)));
    })?;
    Ok(out)
}

/// One-step-ahead reconstruction error at all patch offsets. Only pixels
/// covered by at least one predicted cell count, and the quantization floor
/// is measured over exactly the same cell set, so an oracle matches it
/// exactly and no model can beat it.
pub fn model_rmse(model: &dyn FramePredictor, video: &Video, codebook: &Codebook) -> Result<RmseReport> {
    if model.vocab() < codebook.k() {
        return Err(Error::contract(format!(
            "model has {} outputs, codebook has {} atoms",
            model.vocab(),
            codebook.k()
        )));
    }
    let (ph, pw) = (codebook.patch_h(), codebook.patch_w());
    let mut pred: Vec<ShiftAccumulator> = (0..video.t).map(|_| ShiftAccumulator::new(video.h, video.w)).collect();
    let mut floor = pred.clone();
    let offs: Vec<_> = offsets(ph, pw).filter(|&(dy, dx)| video.h >= dy + ph && video.w >= dx + pw).collect();
    let chunk = rayon::current_num_threads().max(1);
    for group in offs.chunks(chunk) {
        let parts = group
            .par_iter()
            .map(|&(dy, dx)| offset_predictions(model, video, codebook, dy, dx))
            .collect::<Result<Vec<_>>>()?;
        for (&(dy, dx), cells) in group.iter().zip(parts) {
            for (t, i, j, a, truth) in cells {
                let (y, x) = (dy + i as usize * ph, dx + j as usize * pw);
                pred[t as usize].add_block(y, x, codebook.centroid(a as usize), ph, pw)?;
                floor[t as usize].add_block(y, x, codebook.centroid(truth as usize), ph, pw)?;
            }
        }
    }
    let (mut se_m, mut se_f, mut n) = (0.0, 0.0, 0usize);
    for t in 0..video.t {
        let (rm, c) = rmse_0_255(video.frame(t), &pred[t].finish_partial(), video.norm_std);
        let (rf, _) = rmse_0_255(video.frame(t), &floor[t].finish_partial(), video.norm_std);
        se_m += rm * rm * c as f64;
        se_f += rf * rf * c as f64;
        n += c;
    }
    if n == 0 {
        return Err(Error::InsufficientData(format!("{} predicts no cell of this video", model.name())));
    }
    Ok(RmseReport {
        model_rmse: (se_m / n as f64).sqrt(),
        floor_rmse: (se_f / n as f64).sqrt(),
        pixel_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::fit_ngram;
    use crate::quantizer::{encode_video, fit_codebook, preprocess, sample_patches};
    use crate::rcnn::Rcnn;
    use crate::synth::{synth_video, SynthKind, SynthSpec};
    use crate::tasks::predict::OraclePredictor;
    use crate::numerics::DetRng;

    fn setup() -> (Video, Codebook) {
        let v = preprocess(&synth_video(&SynthSpec::new(SynthKind::TranslateTexture, 24, 32, 4, 8, 3).patch_exact(4)).unwrap())
            .unwrap();
        let ps = sample_patches(std::slice::from_ref(&v), 4, 4, 10_000, &mut DetRng::new(1)).unwrap();
        let (cb, _) = fit_codebook(&ps, 12, 20, 2).unwrap();
        (v, cb)
    }

    #[test]
    fn oracle_equals_floor_and_models_do_not_beat_it() {
        let (v, cb) = setup();
        for margin in [0, 1] {
            let r = model_rmse(&OraclePredictor { vocab: cb.k(), margin }, &v, &cb).unwrap();
            assert_eq!(r.model_rmse, r.floor_rmse);
            assert!(r.pixel_count > 0);
        }
        let q = encode_video(&v, &cb).unwrap();
        let bg = fit_ngram(&[q], 2, cb.k()).unwrap();
        let r = model_rmse(&bg, &v, &cb).unwrap();
        assert!(r.model_rmse >= r.floor_rmse);
        assert_eq!(r.pixel_count, 3 * 24 * 32);
    }

    #[test]
    fn rcnn_covers_only_interior_pixels() {
        let (v, cb) = setup();
        // 24x32 at patch 4 leaves a 6x8 grid, too small for the rCNN
        let m = Rcnn::<f32>::zeroed(cb.k(), 2, 2).unwrap();
        assert!(model_rmse(&m, &v, &cb).is_err());
    }
}
