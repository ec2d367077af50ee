use rand::distributions::{Distribution, WeightedIndex};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax, DetRng, Scalar};
use crate::quantizer::{decode_grid, encode_video_at, offsets, Codebook, QuantizedVideo, ShiftAccumulator, Video};
use crate::rcnn::{LogitGrid, Rcnn, MIN_GRID, RCNN_MARGIN};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerateConfig {
    /// Real frames the model is unrolled over before generating.
    pub seed_frames: usize,
    pub horizon: usize,
    /// Samples each atom from the predicted distribution instead of taking
    /// the most likely one. Independent per cell, so spatially incoherent.
    pub sample_seed: Option<u64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            seed_frames: 12,
            horizon: 4,
            sample_seed: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generation {
    /// `horizon` shift-averaged pixel frames.
    pub frames: Video,
    /// Generated atom grids at each `(dy, dx)` offset, in offset order.
    pub grids: Vec<((usize, usize), QuantizedVideo)>,
    /// First generated frame from which every later grid, at every offset,
    /// repeats its predecessor. `Some(0)` means nothing moved at all.
    pub stillness_index: Option<usize>,
}

fn pick<T: Scalar>(logits: &LogitGrid<T>, i: usize, j: usize, rng: Option<&mut DetRng>) -> Result<u32> {
    let cell = logits.cell(i, j);
    match rng {
        None => Ok(argmax(cell) as u32),
        Some(r) => {
            let p = softmax(cell);
            let d = WeightedIndex::new(&p).map_err(|e| Error::Numeric(format!("sampling distribution: {e}")))?;
            Ok(d.sample(r) as u32)
        }
    }
}

fn generate_at<T: Scalar>(
    model: &Rcnn<T>,
    seed: &Video,
    codebook: &Codebook,
    cfg: &GenerateConfig,
    dy: usize,
    dx: usize,
) -> Result<QuantizedVideo> {
    let q = encode_video_at(seed, codebook, dy, dx)?;
    let (hc, wc) = (q.hc, q.wc);
    let (preds, mut code) = model.unrolled_predict(&q)?;
    let mut logits = preds.into_iter().last().expect("seed has frames");
    let mut rng = cfg
        .sample_seed
        .map(|s| DetRng::new(s).split(&format!("offset {dy} {dx}")));
    let mut grid = q.frame(q.t - 1).to_vec();
    let mut out = Vec::with_capacity(cfg.horizon * hc * wc);
    for step in 0..cfg.horizon {
        // border cells have no prediction and keep their last value
        for i in 0..logits.h {
            for j in 0..logits.w {
                grid[(i + RCNN_MARGIN) * wc + j + RCNN_MARGIN] = pick(&logits, i, j, rng.as_mut())?;
            }
        }
        out.extend_from_slice(&grid);
        if step + 1 < cfg.horizon {
            let (c, l) = model.forward(&grid, hc, wc, &code)?;
            code = c;
            logits = l;
        }
    }
    QuantizedVideo::new(cfg.horizon, hc, wc, q.k, out)
}

/// Unrolls the model over the first `seed_frames` frames and feeds its own
/// predictions back for `horizon` more, at every patch offset, then
/// shift-averages the decoded frames.
pub fn generate<T: Scalar>(model: &Rcnn<T>, seed: &Video, codebook: &Codebook, cfg: &GenerateConfig) -> Result<Generation> {
    if cfg.seed_frames == 0 || cfg.horizon == 0 {
        return Err(Error::contract("seed_frames and horizon must be positive"));
    }
    if seed.t < cfg.seed_frames {
        return Err(Error::dim(format!(
            "{} seed frames requested, video has {}",
            cfg.seed_frames, seed.t
        )));
    }
    if codebook.k() > model.vocab() {
        return Err(Error::contract("codebook is larger than the model vocabulary"));
    }
    let (ph, pw) = (codebook.patch_h(), codebook.patch_w());
    let (min_h, min_w) = ((seed.h + 1).saturating_sub(ph) / ph, (seed.w + 1).saturating_sub(pw) / pw);
    if min_h < MIN_GRID || min_w < MIN_GRID {
        return Err(Error::dim(format!(
            "a {}x{} frame gives a {min_h}x{min_w} grid at the last offset, generation needs {MIN_GRID}x{MIN_GRID}",
            seed.h, seed.w
        )));
    }
    let clip = seed.slice_frames(0, cfg.seed_frames)?;
    let offs: Vec<_> = offsets(ph, pw).collect();
    let grids: Vec<_> = offs
        .par_iter()
        .map(|&(dy, dx)| generate_at(model, &clip, codebook, cfg, dy, dx).map(|g| ((dy, dx), g)))
        .collect::<Result<_>>()?;

    let mut pixels = Vec::with_capacity(cfg.horizon * seed.h * seed.w);
    for t in 0..cfg.horizon {
        let mut acc = ShiftAccumulator::new(seed.h, seed.w);
        for ((dy, dx), g) in &grids {
            let px = decode_grid(&g.grid(t), codebook)?;
            acc.add_block(*dy, *dx, &px, g.hc * ph, g.wc * pw)?;
        }
        pixels.extend(acc.finish()?);
    }

    let last_seed: Vec<Vec<u32>> = offs
        .iter()
        .map(|&(dy, dx)| encode_video_at(&clip.slice_frames(cfg.seed_frames - 1, cfg.seed_frames)?, codebook, dy, dx))
        .map(|q| q.map(|q| q.frame(0).to_vec()))
        .collect::<Result<_>>()?;
    let same_as_previous = |t: usize| {
        grids.iter().zip(&last_seed).all(|((_, g), s)| {
            let prev = if t == 0 { &s[..] } else { g.frame(t - 1) };
            g.frame(t) == prev
        })
    };
    let mut stillness_index = None;
    for t in (0..cfg.horizon).rev() {
        if same_as_previous(t) {
            stillness_index = Some(t);
        } else {
            break;
        }
    }

    Ok(Generation {
        frames: Video::with_norm(cfg.horizon, seed.h, seed.w, pixels, seed.norm_std)?,
        grids,
        stillness_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::HasParams;
    use crate::quantizer::Codebook;

    /// Two atoms: dark and bright 2x2 patches.
    fn codebook() -> Codebook {
        Codebook::new(2, 2, vec![-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0]).unwrap()
    }

    fn checker_video(t: usize) -> Video {
        let (h, w) = (20, 22);
        let mut px = Vec::new();
        for f in 0..t {
            for y in 0..h {
                for x in 0..w {
                    px.push(if (y / 2 + x / 2 + f) % 2 == 0 { -1.0 } else { 1.0 });
                }
            }
        }
        Video::new(t, h, w, px).unwrap()
    }

    /// Every weight zero except the output bias of `bias_atom`.
    fn biased_model(bias_atom: usize) -> Rcnn<f64> {
        let mut m = Rcnn::<f64>::zeroed(2, 2, 2).unwrap();
        m.params_mut().get_mut(12).data_mut()[bias_atom] = 1.0;
        m
    }

    #[test]
    fn constant_prediction_freezes_interior() {
        let v = checker_video(3);
        let cb = codebook();
        let cfg = GenerateConfig {
            seed_frames: 3,
            horizon: 3,
            sample_seed: None,
        };
        let g = generate(&biased_model(1), &v, &cb, &cfg).unwrap();
        assert_eq!(g.frames.t, 3);
        for ((dy, dx), q) in &g.grids {
            let seed = encode_video_at(&v.slice_frames(2, 3).unwrap(), &cb, *dy, *dx).unwrap();
            for t in 0..3 {
                for i in 0..q.hc {
                    for j in 0..q.wc {
                        let inner = i >= 4 && j >= 4 && i + 4 < q.hc && j + 4 < q.wc;
                        if inner {
                            assert_eq!(q.get(t, i, j), 1);
                        } else {
                            assert_eq!(q.get(t, i, j), seed.get(0, i, j));
                        }
                    }
                }
            }
        }
        // frame 0 changes the interior, later frames repeat it
        assert_eq!(g.stillness_index, Some(1));
    }

    #[test]
    fn deterministic_and_sampling_is_seeded() {
        let v = checker_video(2);
        let cb = codebook();
        let m = Rcnn::<f64>::new(2, 2, 2, 3).unwrap();
        let cfg = GenerateConfig {
            seed_frames: 2,
            horizon: 2,
            sample_seed: None,
        };
        let a = generate(&m, &v, &cb, &cfg).unwrap();
        let b = generate(&m, &v, &cb, &cfg).unwrap();
        assert_eq!(a.frames, b.frames);
        let s = GenerateConfig {
            sample_seed: Some(9),
            ..cfg
        };
        let c = generate(&m, &v, &cb, &s).unwrap();
        let d = generate(&m, &v, &cb, &s).unwrap();
        assert_eq!(c.frames, d.frames);
    }

    #[test]
    fn small_seed_is_rejected() {
        let cb = codebook();
        let v = Video::new(2, 16, 40, vec![0.0; 2 * 16 * 40]).unwrap();
        let cfg = GenerateConfig {
            seed_frames: 2,
            horizon: 1,
            sample_seed: None,
        };
        assert!(matches!(generate(&biased_model(0), &v, &cb, &cfg), Err(Error::Dimension(_))));
        let cfg = GenerateConfig { seed_frames: 5, ..cfg };
        assert!(generate(&biased_model(0), &checker_video(2), &cb, &cfg).is_err());
    }
}
