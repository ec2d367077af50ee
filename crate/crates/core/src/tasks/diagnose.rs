use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::DetRng;
use crate::quantizer::QuantizedVideo;

use super::predict::{evaluate, EvalReport, FramePredictor};

/// Condition labels, in report order.
pub const CONDITIONS: [&str; 8] = [
    "static_1_natural",
    "static_long_natural",
    "static_1_permuted",
    "static_long_permuted",
    "natural",
    "reversed",
    "random",
    "skip1",
];

fn repeat_frame(frame: &[u32], t: usize, v: &QuantizedVideo) -> Result<QuantizedVideo> {
    QuantizedVideo::new(t, v.hc, v.wc, v.k, frame.repeat(t))
}

fn permute_cells(frame: &[u32], perm: &[usize]) -> Vec<u32> {
    perm.iter().map(|&p| frame[p]).collect()
}

/// Perplexity of `model` on the same clips presented as static sequences
/// (one repeat, or as many repeats as the clip has frames), with cells in
/// place or under one fixed random spatial permutation, and on the real
/// frames in natural, reversed, random and every-other-frame order.
pub fn diagnose_static_dynamic(model: &dyn FramePredictor, videos: &[QuantizedVideo], seed: u64) -> Result<Vec<EvalReport>> {
    let first = videos
        .first()
        .ok_or_else(|| Error::InsufficientData("diagnostics need at least one video".into()))?;
    if videos.iter().any(|v| (v.hc, v.wc) != (first.hc, first.wc) || v.t < 3) {
        return Err(Error::dim("diagnostic videos must share a grid size and have at least 3 frames"));
    }
    let root = DetRng::new(seed);
    let mut perm: Vec<usize> = (0..first.hc * first.wc).collect();
    perm.shuffle(&mut root.split("layout"));

    let mut sets: Vec<Vec<QuantizedVideo>> = vec![Vec::new(); CONDITIONS.len()];
    for (n, v) in videos.iter().enumerate() {
        let f0 = v.frame(0);
        let p0 = permute_cells(f0, &perm);
        sets[0].push(repeat_frame(f0, 2, v)?);
        sets[1].push(repeat_frame(f0, v.t, v)?);
        sets[2].push(repeat_frame(&p0, 2, v)?);
        sets[3].push(repeat_frame(&p0, v.t, v)?);
        sets[4].push(v.clone());
        sets[5].push(v.reorder_frames(&(0..v.t).rev().collect::<Vec<_>>())?);
        let mut order: Vec<usize> = (0..v.t).collect();
        order.shuffle(&mut root.split(&format!("order {n}")));
        sets[6].push(v.reorder_frames(&order)?);
        sets[7].push(v.reorder_frames(&(0..v.t).step_by(2).collect::<Vec<_>>())?);
    }
    CONDITIONS
        .iter()
        .zip(sets)
        .map(|(c, set)| Ok(evaluate(model, &set, "diagnostic", None)?.with_condition(*c)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::{fit_ngram, NGramModel};

    fn shifting(t: usize, hc: usize, wc: usize, k: usize) -> QuantizedVideo {
        let mut a = Vec::new();
        for f in 0..t {
            for i in 0..hc {
                for j in 0..wc {
                    a.push(((i * 7 + j + f) % k) as u32);
                }
            }
        }
        QuantizedVideo::new(t, hc, wc, k, a).unwrap()
    }

    #[test]
    fn untrained_model_gives_v_everywhere() {
        let m = NGramModel::new(2, 9).unwrap();
        let r = diagnose_static_dynamic(&m, &[shifting(6, 4, 5, 9)], 1).unwrap();
        assert_eq!(r.len(), 8);
        for (rep, c) in r.iter().zip(CONDITIONS) {
            assert_eq!(rep.condition.as_deref(), Some(c));
            assert!((rep.perplexity - 9.0).abs() < 1e-9);
        }
        assert_eq!(r[0].patch_count, 20);
        assert_eq!(r[1].patch_count, 5 * 20);
        assert_eq!(r[7].patch_count, 2 * 20);
    }

    #[test]
    fn trained_bigram_prefers_natural_order() {
        let v = shifting(12, 4, 5, 9);
        let bg = fit_ngram(std::slice::from_ref(&v), 2, 9).unwrap();
        let r = diagnose_static_dynamic(&bg, &[v], 3).unwrap();
        let p = |c: &str| r.iter().find(|x| x.condition.as_deref() == Some(c)).unwrap().perplexity;
        assert!(p("natural") < p("random"));
        assert!(p("natural") < p("skip1"));
        assert!(p("natural") < p("reversed"));
    }

    #[test]
    fn empty_input_is_rejected() {
        let m = NGramModel::new(2, 3).unwrap();
        assert!(diagnose_static_dynamic(&m, &[], 0).is_err());
    }
}
