//! Count-based temporal models with add-one smoothing over a vocabulary of
//! `V` atoms.

use std::collections::HashMap;
use std::path::Path;

use crate::dataio::fsutil::{read_file, write_atomic, ByteReader};
use crate::error::{check_index, Error, Result};
use crate::quantizer::QuantizedVideo;

pub const NGRAM_MAGIC: &[u8; 4] = b"VLMN";
pub const NGRAM_VERSION: u32 = 1;

/// Atom tuple, oldest first. Slots past the order are zero.
pub type Tuple = [u32; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    n: usize,
    vocab: usize,
    joint: HashMap<Tuple, u64>,
    context: HashMap<Tuple, u64>,
}

fn key(atoms: &[u32]) -> Tuple {
    let mut k = [0; 3];
    k[..atoms.len()].copy_from_slice(atoms);
    k
}

impl NGramModel {
    pub fn new(n: usize, vocab: usize) -> Result<Self> {
        if !(n == 2 || n == 3) {
            return Err(Error::contract(format!("n-gram order must be 2 or 3, got {n}")));
        }
        if vocab == 0 {
            return Err(Error::contract("vocabulary must be non-empty"));
        }
        Ok(NGramModel {
            n,
            vocab,
            joint: HashMap::new(),
            context: HashMap::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Counts every length-`n` window of `seq`. Windows never span sequences.
    pub fn observe_sequence(&mut self, seq: &[u32]) -> Result<()> {
        for &a in seq {
            check_index("atom", a as usize, self.vocab)?;
        }
        for w in seq.windows(self.n) {
            *self.joint.entry(key(w)).or_insert(0) += 1;
            *self.context.entry(key(&w[..self.n - 1])).or_insert(0) += 1;
        }
        Ok(())
    }

    pub fn joint_count(&self, tuple: &[u32]) -> u64 {
        debug_assert_eq!(tuple.len(), self.n);
        self.joint.get(&key(tuple)).copied().unwrap_or(0)
    }

    pub fn context_count(&self, ctx: &[u32]) -> u64 {
        debug_assert_eq!(ctx.len(), self.n - 1);
        self.context.get(&key(ctx)).copied().unwrap_or(0)
    }

    /// Distinct n-tuples observed.
    pub fn entries(&self) -> usize {
        self.joint.len()
    }

    /// `(count(ctx, t) + 1, count(ctx) + V)`.
    pub fn prob_rational(&self, ctx: &[u32], target: u32) -> (u64, u64) {
        let mut t = [0u32; 3];
        t[..ctx.len()].copy_from_slice(ctx);
        t[ctx.len()] = target;
        (
            self.joint_count(&t[..self.n]) + 1,
            self.context_count(ctx) + self.vocab as u64,
        )
    }

    pub fn prob(&self, ctx: &[u32], target: u32) -> f64 {
        let (a, b) = self.prob_rational(ctx, target);
        a as f64 / b as f64
    }

    /// Smoothed distribution over all `V` targets.
    pub fn distribution(&self, ctx: &[u32]) -> Result<Vec<f64>> {
        if ctx.len() != self.n - 1 {
            return Err(Error::dim(format!(
                "context of length {} for an order-{} model",
                ctx.len(),
                self.n
            )));
        }
        for &a in ctx {
            check_index("atom", a as usize, self.vocab)?;
        }
        let denom = (self.context_count(ctx) + self.vocab as u64) as f64;
        let mut p = vec![1.0 / denom; self.vocab];
        let mut t = [0u32; 3];
        t[..ctx.len()].copy_from_slice(ctx);
        // only observed continuations differ from the floor
        if self.context_count(ctx) > 0 {
            for (v, pv) in p.iter_mut().enumerate() {
                t[ctx.len()] = v as u32;
                let c = self.joint_count(&t[..self.n]);
                if c > 0 {
                    *pv = (c + 1) as f64 / denom;
                }
            }
        }
        Ok(p)
    }

    /// Natural-log probabilities of every target, written into `out`.
    pub fn log_distribution(&self, ctx: &[u32], out: &mut [f64]) -> Result<()> {
        let p = self.distribution(ctx)?;
        for (o, v) in out.iter_mut().zip(p) {
            *o = v.ln();
        }
        Ok(())
    }

    fn sorted_entries(&self) -> Vec<(Tuple, u64)> {
        let mut v: Vec<(Tuple, u64)> = self.joint.iter().map(|(k, c)| (*k, *c)).collect();
        v.sort_unstable();
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = self.sorted_entries();
        let mut b = Vec::with_capacity(24 + entries.len() * (4 * self.n + 8));
        b.extend_from_slice(NGRAM_MAGIC);
        b.extend_from_slice(&NGRAM_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.n as u32).to_le_bytes());
        b.extend_from_slice(&(self.vocab as u32).to_le_bytes());
        b.extend_from_slice(&(entries.len() as u64).to_le_bytes());
        for (t, c) in entries {
            for a in &t[..self.n] {
                b.extend_from_slice(&a.to_le_bytes());
            }
            b.extend_from_slice(&c.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.header(NGRAM_MAGIC, NGRAM_VERSION)?;
        let n = r.u32()? as usize;
        let vocab = r.u32()? as usize;
        let mut m = NGramModel::new(n, vocab).map_err(|e| Error::format(path, e.to_string()))?;
        let count = r.u64()?;
        let mut prev: Option<Tuple> = None;
        for _ in 0..count {
            let mut t = [0u32; 3];
            for slot in t.iter_mut().take(n) {
                *slot = r.u32()?;
                if *slot as usize >= vocab {
                    return Err(Error::format(path, format!("atom {slot} outside vocabulary {vocab}")));
                }
            }
            let c = r.u64()?;
            if c == 0 || prev.is_some_and(|p| p >= t) {
                return Err(Error::format(path, "records must be sorted, unique and non-zero"));
            }
            prev = Some(t);
            m.joint.insert(t, c);
            *m.context.entry(key(&t[..n - 1])).or_insert(0) += c;
        }
        r.finish()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_file(path)?)
    }
}

/// Fits an order-`n` model on the temporal stream at every grid location of
/// every video.
pub fn fit_ngram(corpus: &[QuantizedVideo], n: usize, vocab: usize) -> Result<NGramModel> {
    let mut m = NGramModel::new(n, vocab)?;
    for v in corpus {
        for i in 0..v.hc {
            for j in 0..v.wc {
                m.observe_sequence(&v.stream(i, j))?;
            }
        }
    }
    Ok(m)
}

/// Fits on raw sequences.
pub fn fit_ngram_sequences(seqs: &[Vec<u32>], n: usize, vocab: usize) -> Result<NGramModel> {
    let mut m = NGramModel::new(n, vocab)?;
    for s in seqs {
        m.observe_sequence(s)?;
    }
    Ok(m)
}
