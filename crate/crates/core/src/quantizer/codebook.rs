use std::path::Path;

use crate::dataio::fsutil::{read_file, write_atomic, ByteReader};
use crate::error::{check_index, Error, Result};

use super::video::{crop_frame, Video};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"VLMC";
pub const QUANTIZED_MAGIC: &[u8; 4] = b"VLMQ";
pub const FORMAT_VERSION: u32 = 1;

/// `k` centroid patches of `patch_h × patch_w` pixels in preprocessed units.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    k: usize,
    patch_h: usize,
    patch_w: usize,
    centroids: Vec<f32>,
}

/// Squared Euclidean distance with a fixed 8-lane accumulation order.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        s += d * d;
    }
    s
}

impl Codebook {
    pub fn new(patch_h: usize, patch_w: usize, centroids: Vec<f32>) -> Result<Self> {
        let d = patch_h * patch_w;
        if d == 0 {
            return Err(Error::dim("patch dimensions must be positive"));
        }
        if centroids.is_empty() || centroids.len() % d != 0 {
            return Err(Error::dim(format!(
                "{} centroid values is not a positive multiple of patch size {d}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite centroid value".into()));
        }
        Ok(Codebook {
            k: centroids.len() / d,
            patch_h,
            patch_w,
            centroids,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn patch_h(&self) -> usize {
        self.patch_h
    }

    pub fn patch_w(&self) -> usize {
        self.patch_w
    }

    pub fn dim(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim()..(i + 1) * self.dim()]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Nearest centroid by squared Euclidean distance, lowest index on ties.
    pub fn nearest(&self, patch: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f32::INFINITY;
        for (i, c) in self.centroids.chunks_exact(self.dim()).enumerate() {
            let d = sq_dist(patch, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn value_range(&self) -> (f32, f32) {
        self.centroids
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(28 + self.centroids.len() * 4);
        b.extend_from_slice(CODEBOOK_MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.k as u32).to_le_bytes());
        b.extend_from_slice(&(self.patch_h as u32).to_le_bytes());
        b.extend_from_slice(&(self.patch_w as u32).to_le_bytes());
        b.extend_from_slice(&0f64.to_le_bytes());
        for v in &self.centroids {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.header(CODEBOOK_MAGIC, FORMAT_VERSION)?;
        let k = r.u32()? as usize;
        let ph = r.u32()? as usize;
        let pw = r.u32()? as usize;
        let flag = r.f64()?;
        if flag != 0.0 {
            return Err(Error::format(path, format!("unknown norm convention flag {flag}")));
        }
        let n = k * ph * pw;
        let mut c = Vec::with_capacity(n);
        for _ in 0..n {
            c.push(r.f32()?);
        }
        r.finish()?;
        Codebook::new(ph, pw, c).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_file(path)?)
    }
}

/// One frame's grid of atom indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomGrid {
    pub hc: usize,
    pub wc: usize,
    pub atoms: Vec<u32>,
}

impl AtomGrid {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.atoms[i * self.wc + j]
    }
}

/// `T × Hc × Wc` atom indices into a codebook of size `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedVideo {
    pub t: usize,
    pub hc: usize,
    pub wc: usize,
    pub k: usize,
    pub atoms: Vec<u32>,
}

impl QuantizedVideo {
    pub fn new(t: usize, hc: usize, wc: usize, k: usize, atoms: Vec<u32>) -> Result<Self> {
        if atoms.len() != t * hc * wc {
            return Err(Error::dim(format!(
                "{} atoms for a {t}x{hc}x{wc} grid",
                atoms.len()
            )));
        }
        if let Some(&a) = atoms.iter().find(|&&a| a as usize >= k) {
            return Err(Error::Index {
                what: "atom",
                index: a as usize,
                limit: k,
            });
        }
        Ok(QuantizedVideo {
            t,
            hc,
            wc,
            k,
            atoms,
        })
    }

    pub fn from_frames(k: usize, frames: &[AtomGrid]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::dim("no frames to assemble"))?;
        let (hc, wc) = (first.hc, first.wc);
        let mut atoms = Vec::with_capacity(frames.len() * hc * wc);
        for f in frames {
            if (f.hc, f.wc) != (hc, wc) {
                return Err(Error::dim("frame grids of differing sizes"));
            }
            atoms.extend_from_slice(&f.atoms);
        }
        QuantizedVideo::new(frames.len(), hc, wc, k, atoms)
    }

    pub fn cells(&self) -> usize {
        self.hc * self.wc
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        &self.atoms[t * self.cells()..(t + 1) * self.cells()]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [u32] {
        let c = self.cells();
        &mut self.atoms[t * c..(t + 1) * c]
    }

    pub fn grid(&self, t: usize) -> AtomGrid {
        AtomGrid {
            hc: self.hc,
            wc: self.wc,
            atoms: self.frame(t).to_vec(),
        }
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> u32 {
        self.atoms[(t * self.hc + i) * self.wc + j]
    }

    pub fn set(&mut self, t: usize, i: usize, j: usize, a: u32) {
        self.atoms[(t * self.hc + i) * self.wc + j] = a;
    }

    /// Temporal stream of atoms at grid location `(i, j)`.
    pub fn stream(&self, i: usize, j: usize) -> Vec<u32> {
        (0..self.t).map(|t| self.get(t, i, j)).collect()
    }

    /// New video made of the frames at `order` (indices may repeat).
    pub fn reorder_frames(&self, order: &[usize]) -> Result<Self> {
        let mut atoms = Vec::with_capacity(order.len() * self.cells());
        for &t in order {
            check_index("frame", t, self.t)?;
            atoms.extend_from_slice(self.frame(t));
        }
        QuantizedVideo::new(order.len(), self.hc, self.wc, self.k, atoms)
    }

    /// Spatial sub-grid `[i0, i0+h) × [j0, j0+w)` of every frame.
    pub fn crop(&self, i0: usize, j0: usize, h: usize, w: usize) -> Result<Self> {
        if i0 + h > self.hc || j0 + w > self.wc || h == 0 || w == 0 {
            return Err(Error::dim(format!(
                "crop {h}x{w} at ({i0},{j0}) outside {}x{} grid",
                self.hc, self.wc
            )));
        }
        let mut atoms = Vec::with_capacity(self.t * h * w);
        for t in 0..self.t {
            for i in i0..i0 + h {
                for j in j0..j0 + w {
                    atoms.push(self.get(t, i, j));
                }
            }
        }
        QuantizedVideo::new(self.t, h, w, self.k, atoms)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(24 + self.atoms.len() * 4);
        b.extend_from_slice(QUANTIZED_MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [self.t, self.hc, self.wc, self.k] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for a in &self.atoms {
            b.extend_from_slice(&a.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.header(QUANTIZED_MAGIC, FORMAT_VERSION)?;
        let t = r.u32()? as usize;
        let hc = r.u32()? as usize;
        let wc = r.u32()? as usize;
        let k = r.u32()? as usize;
        let n = t * hc * wc;
        let mut atoms = Vec::with_capacity(n);
        for _ in 0..n {
            atoms.push(r.u32()?);
        }
        r.finish()?;
        QuantizedVideo::new(t, hc, wc, k, atoms).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_file(path)?)
    }
}

/// Maps each non-overlapping patch of the top-left patch-aligned region of
/// `frame` to its nearest centroid.
pub fn encode_frame(frame: &[f32], h: usize, w: usize, codebook: &Codebook) -> Result<AtomGrid> {
    let (ph, pw) = (codebook.patch_h(), codebook.patch_w());
    if h < ph || w < pw {
        return Err(Error::dim(format!(
            "frame {h}x{w} smaller than one {ph}x{pw} patch"
        )));
    }
    if frame.len() != h * w {
        return Err(Error::dim(format!("{} pixels for a {h}x{w} frame", frame.len())));
    }
    let (hc, wc) = (h / ph, w / pw);
    let mut patch = vec![0f32; ph * pw];
    let mut atoms = Vec::with_capacity(hc * wc);
    for i in 0..hc {
        for j in 0..wc {
            for y in 0..ph {
                let src = (i * ph + y) * w + j * pw;
                patch[y * pw..(y + 1) * pw].copy_from_slice(&frame[src..src + pw]);
            }
            atoms.push(codebook.nearest(&patch) as u32);
        }
    }
    Ok(AtomGrid { hc, wc, atoms })
}

/// Replaces each cell by its centroid; output is `(hc·ph) × (wc·pw)`.
pub fn decode_grid(grid: &AtomGrid, codebook: &Codebook) -> Result<Vec<f32>> {
    let (ph, pw) = (codebook.patch_h(), codebook.patch_w());
    let w = grid.wc * pw;
    let mut out = vec![0f32; grid.hc * ph * w];
    for i in 0..grid.hc {
        for j in 0..grid.wc {
            let a = grid.get(i, j) as usize;
            check_index("atom", a, codebook.k())?;
            let c = codebook.centroid(a);
            for y in 0..ph {
                let dst = (i * ph + y) * w + j * pw;
                out[dst..dst + pw].copy_from_slice(&c[y * pw..(y + 1) * pw]);
            }
        }
    }
    Ok(out)
}

pub fn encode_video(video: &Video, codebook: &Codebook) -> Result<QuantizedVideo> {
    encode_video_at(video, codebook, 0, 0)
}

/// Quantizes every frame cropped at pixel offset `(dy, dx)`.
pub fn encode_video_at(video: &Video, codebook: &Codebook, dy: usize, dx: usize) -> Result<QuantizedVideo> {
    let mut frames = Vec::with_capacity(video.t);
    for t in 0..video.t {
        let (crop, h, w) = crop_frame(video.frame(t), video.h, video.w, dy, dx);
        frames.push(encode_frame(&crop, h, w, codebook)?);
    }
    QuantizedVideo::from_frames(codebook.k(), &frames)
}
