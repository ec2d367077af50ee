use serde::Serialize;

use crate::error::{check_index, Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::quantizer::{Codebook, QuantizedVideo};
use crate::rcnn::Rcnn;

/// The `m` rows of a `V × E` embedding closest to row `atom` in Euclidean
/// distance, nearest first, ties to the lower index. The query row itself is
/// excluded.
pub fn embedding_neighbors<T: Scalar>(embedding: &Tensor<T>, atom: usize, m: usize) -> Result<Vec<(u32, f64)>> {
    if embedding.ndim() != 2 {
        return Err(Error::dim("embedding must be a matrix"));
    }
    let v = embedding.shape()[0];
    check_index("atom", atom, v)?;
    if m >= v {
        return Err(Error::contract(format!("asked for {m} neighbours among {} other atoms", v - 1)));
    }
    let q: Vec<f64> = embedding.row(atom).iter().map(|x| x.as_f64()).collect();
    let mut d: Vec<(u32, f64)> = (0..v)
        .filter(|&r| r != atom)
        .map(|r| {
            let s: f64 = embedding.row(r).iter().zip(&q).map(|(a, b)| (a.as_f64() - b).powi(2)).sum();
            (r as u32, s.sqrt())
        })
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(m);
    Ok(d)
}

/// Decoded centroids side by side, min-max scaled to 0–255, for writing as
/// a grayscale image. Returns `(pixels, height, width)`.
pub fn centroid_strip(codebook: &Codebook, rows: &[Vec<u32>]) -> Result<(Vec<f32>, usize, usize)> {
    let (ph, pw) = (codebook.patch_h(), codebook.patch_w());
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if cols == 0 {
        return Err(Error::contract("nothing to draw"));
    }
    let (h, w) = (rows.len() * ph, cols * pw);
    let mut raw = vec![f32::NAN; h * w];
    for (r, row) in rows.iter().enumerate() {
        for (c, &a) in row.iter().enumerate() {
            check_index("atom", a as usize, codebook.k())?;
            let cen = codebook.centroid(a as usize);
            for y in 0..ph {
                let dst = (r * ph + y) * w + c * pw;
                raw[dst..dst + pw].copy_from_slice(&cen[y * pw..(y + 1) * pw]);
            }
        }
    }
    let (lo, hi) = raw
        .iter()
        .filter(|x| !x.is_nan())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = raw
        .into_iter()
        .map(|x| if x.is_nan() { 0.0 } else { (x - lo) / span * 255.0 })
        .collect();
    Ok((px, h, w))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnitHit {
    pub video: usize,
    pub t: usize,
    /// Top-left cell of the 3×3 neighbourhood.
    pub i: usize,
    pub j: usize,
    pub activation: f64,
    pub atoms: [u32; 9],
}

/// The `m` 3×3 atom neighbourhoods of `corpus` that drive first-layer map
/// `map` hardest, strongest first. `layer` must be 1, the first convolution.
pub fn top_activating_patches<T: Scalar>(
    model: &Rcnn<T>,
    layer: usize,
    map: usize,
    corpus: &[QuantizedVideo],
    m: usize,
) -> Result<Vec<UnitHit>> {
    if layer != 1 {
        return Err(Error::contract(format!("only layer 1 can be probed, got {layer}")));
    }
    if map >= model.maps() {
        return Err(Error::contract(format!("layer 1 has {} maps, got map {map}", model.maps())));
    }
    if corpus.is_empty() {
        return Err(Error::contract("corpus is empty"));
    }
    let mut hits = Vec::new();
    for (vi, v) in corpus.iter().enumerate() {
        if v.hc < 3 || v.wc < 3 {
            continue;
        }
        let (oh, ow) = (v.hc - 2, v.wc - 2);
        for t in 0..v.t {
            let act = model.first_layer(v.frame(t), v.hc, v.wc)?;
            let plane = &act[map * oh * ow..(map + 1) * oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    let mut atoms = [0u32; 9];
                    for (k, a) in atoms.iter_mut().enumerate() {
                        *a = v.get(t, i + k / 3, j + k % 3);
                    }
                    hits.push(UnitHit {
                        video: vi,
                        t,
                        i,
                        j,
                        activation: plane[i * ow + j].as_f64(),
                        atoms,
                    });
                }
            }
        }
    }
    // stable sort keeps scan order among equal activations
    hits.sort_by(|a, b| b.activation.total_cmp(&a.activation));
    hits.truncate(m);
    Ok(hits)
}

/// Renders hits as a row of decoded 3×3 neighbourhoods.
pub fn hits_image(codebook: &Codebook, hits: &[UnitHit]) -> Result<(Vec<f32>, usize, usize)> {
    let mut rows = vec![Vec::new(); 3];
    for h in hits {
        for r in 0..3 {
            rows[r].extend_from_slice(&h.atoms[r * 3..r * 3 + 3]);
        }
    }
    centroid_strip(codebook, &rows)
}
