use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::DetRng;

use super::codebook::Codebook;
use super::video::Video;

/// Flat collection of equally sized patch vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patch_h: usize,
    pub patch_w: usize,
    pub data: Vec<f32>,
}

impl PatchSet {
    pub fn new(patch_h: usize, patch_w: usize) -> Self {
        PatchSet {
            patch_h,
            patch_w,
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim()..(i + 1) * self.dim()]
    }

    pub fn push(&mut self, p: &[f32]) {
        debug_assert_eq!(p.len(), self.dim());
        self.data.extend_from_slice(p);
    }
}

fn extract(video: &Video, t: usize, y: usize, x: usize, ph: usize, pw: usize, out: &mut PatchSet) {
    let f = video.frame(t);
    for r in 0..ph {
        let s = (y + r) * video.w + x;
        out.data.extend_from_slice(&f[s..s + pw]);
    }
}

/// Every patch-aligned patch of every frame when the total is at most `cap`,
/// otherwise `cap` patches drawn uniformly at random (video, frame, location)
/// with pixel-granular positions.
pub fn sample_patches(videos: &[Video], patch_h: usize, patch_w: usize, cap: usize, rng: &mut DetRng) -> Result<PatchSet> {
    let mut set = PatchSet::new(patch_h, patch_w);
    let usable: Vec<&Video> = videos
        .iter()
        .filter(|v| v.h >= patch_h && v.w >= patch_w)
        .collect();
    if usable.is_empty() {
        return Err(Error::InsufficientData(
            "no video is large enough to hold one patch".into(),
        ));
    }
    let aligned: usize = usable
        .iter()
        .map(|v| v.t * (v.h / patch_h) * (v.w / patch_w))
        .sum();
    if aligned <= cap {
        for v in &usable {
            for t in 0..v.t {
                for i in 0..v.h / patch_h {
                    for j in 0..v.w / patch_w {
                        extract(v, t, i * patch_h, j * patch_w, patch_h, patch_w, &mut set);
                    }
                }
            }
        }
    } else {
        for _ in 0..cap {
            let v = usable[rng.gen_range(0..usable.len())];
            let t = rng.gen_range(0..v.t);
            let y = rng.gen_range(0..=v.h - patch_h);
            let x = rng.gen_range(0..=v.w - patch_w);
            extract(v, t, y, x, patch_h, patch_w, &mut set);
        }
    }
    Ok(set)
}

/// Per-iteration record of a k-means fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitTrace {
    /// Total squared distance to the assigned centroid after each assignment step.
    pub distortions: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeded: usize,
}

fn sq64(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

fn nearest64(p: &[f32], cents: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cv) in cents.chunks_exact(d).enumerate() {
        let dist = sq64(p, cv);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn count_distinct(patches: &PatchSet) -> usize {
    let mut keys: Vec<Vec<u32>> = (0..patches.len())
        .map(|i| patches.get(i).iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn kmeans_pp(patches: &PatchSet, k: usize, rng: &mut DetRng) -> Vec<f64> {
    let d = patches.dim();
    let n = patches.len();
    let mut cents = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..n);
    cents.extend(patches.get(first).iter().map(|&v| v as f64));
    let mut best: Vec<f64> = (0..n).map(|i| sq64(patches.get(i), &cents[..d])).collect();
    for c in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &b) in best.iter().enumerate() {
                acc += b;
                if acc > r && b > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave r at the very top of the cumulative sum
            pick.unwrap_or_else(|| best.iter().rposition(|&b| b > 0.0).unwrap())
        } else {
            rng.gen_range(0..n)
        };
        cents.extend(patches.get(pick).iter().map(|&v| v as f64));
        let new_c = &cents[c * d..(c + 1) * d];
        for (i, b) in best.iter_mut().enumerate() {
            let dist = sq64(patches.get(i), new_c);
            if dist < *b {
                *b = dist;
            }
        }
    }
    cents
}

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iters`
/// assignment steps or when no assignment changes. Centroids are kept in
/// `f64` during fitting; duplicate centroids are collapsed before returning.
pub fn fit_codebook(patches: &PatchSet, k: usize, max_iters: usize, seed: u64) -> Result<(Codebook, FitTrace)> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    if max_iters == 0 {
        return Err(Error::contract("max_iters must be at least 1"));
    }
    let distinct = count_distinct(patches);
    if distinct < k {
        return Err(Error::InsufficientData(format!(
            "{distinct} distinct patches for k = {k}"
        )));
    }
    let d = patches.dim();
    let n = patches.len();
    let mut rng = DetRng::new(seed).split("kmeans");
    let mut cents = kmeans_pp(patches, k, &mut rng);
    let mut assign = vec![usize::MAX; n];
    let mut dists = vec![0f64; n];
    let mut trace = FitTrace::default();

    for iter in 0..max_iters {
        let mut changed = false;
        let nearest: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest64(patches.get(i), &cents, d))
            .collect();
        for (i, &(c, dist)) in nearest.iter().enumerate() {
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            dists[i] = dist;
        }
        trace.distortions.push(dists.iter().sum());
        trace.iterations = iter + 1;
        if !changed {
            trace.converged = true;
            break;
        }

        let mut sums = vec![0f64; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(patches.get(i)) {
                *s += v as f64;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                let n_c = counts[c] as f64;
                for (dst, s) in cents[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *dst = s / n_c;
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold((0, -1.0), |best, i| if dists[i] > best.1 { (i, dists[i]) } else { best })
                    .0;
                taken[far] = true;
                for (dst, &v) in cents[c * d..(c + 1) * d].iter_mut().zip(patches.get(far)) {
                    *dst = v as f64;
                }
                trace.reseeded += 1;
            }
        }
    }

    let mut out: Vec<f32> = Vec::with_capacity(k * d);
    let mut seen: Vec<&[f32]> = Vec::new();
    let as32: Vec<f32> = cents.iter().map(|&v| v as f32).collect();
    for c in as32.chunks_exact(d) {
        if !seen.contains(&c) {
            seen.push(c);
            out.extend_from_slice(c);
        }
    }
    Ok((Codebook::new(patches.patch_h, patches.patch_w, out)?, trace))
}
