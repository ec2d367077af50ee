//! Flat `key = value` run configuration. Sections are dotted prefixes
//! (`train.lr = 0.005`); `#` starts a comment line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::neural_lms::TrainConfig;
use crate::numerics::derive_seed;
use crate::synth::SynthKind;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_dir: Option<PathBuf>,
    pub valid_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub deterministic: bool,

    pub codebook_k: usize,
    pub codebook_patch: usize,
    pub codebook_sample_cap: usize,
    pub codebook_max_iters: usize,
    pub codebook_seed: Option<u64>,
    /// Existing codebook to use instead of `<out>/codebook.vlmc`.
    pub codebook_path: Option<PathBuf>,

    /// Patch-grid offsets at which each training video is quantized; the
    /// first is always the aligned grid.
    pub quantize_train_offsets: usize,

    pub model_kind: Option<String>,
    pub model_order: usize,
    pub model_embed_dim: Option<usize>,
    pub model_hidden_dim: usize,
    pub model_maps: usize,
    /// rCNN training crop in cells; `None` trains on whole frames.
    pub model_crop: Option<usize>,

    pub train: TrainConfig,
    pub train_seed: Option<u64>,

    pub generate_seed_frames: usize,
    pub generate_horizon: usize,
    pub generate_sample: bool,

    pub fill_iters: usize,
    pub fill_missing: Vec<usize>,

    pub synth_kind: SynthKind,
    pub synth_h: usize,
    pub synth_w: usize,
    pub synth_t: usize,
    pub synth_velocity: i64,
    pub synth_count: usize,
    pub synth_patch_exact: Option<usize>,
    pub synth_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_dir: None,
            valid_dir: None,
            test_dir: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            deterministic: false,
            codebook_k: 256,
            codebook_patch: 8,
            codebook_sample_cap: 1_000_000,
            codebook_max_iters: 50,
            codebook_seed: None,
            codebook_path: None,
            quantize_train_offsets: 1,
            model_kind: None,
            model_order: 3,
            model_embed_dim: None,
            model_hidden_dim: 256,
            model_maps: 128,
            model_crop: Some(crate::rcnn::MIN_GRID),
            train: TrainConfig::default(),
            train_seed: None,
            generate_seed_frames: 12,
            generate_horizon: 4,
            generate_sample: false,
            fill_iters: crate::tasks::DEFAULT_FILL_ITERS,
            fill_missing: Vec::new(),
            synth_kind: SynthKind::TranslateTexture,
            synth_h: 64,
            synth_w: 64,
            synth_t: 32,
            synth_velocity: 8,
            synth_count: 1,
            synth_patch_exact: None,
            synth_seed: None,
        }
    }
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "data.train",
    "data.valid",
    "data.test",
    "out",
    "seed",
    "deterministic",
    "codebook.k",
    "codebook.patch",
    "codebook.sample_cap",
    "codebook.max_iters",
    "codebook.seed",
    "codebook.path",
    "quantize.train_offsets",
    "model.kind",
    "model.order",
    "model.embed_dim",
    "model.hidden_dim",
    "model.maps",
    "model.crop",
    "train.bptt_steps",
    "train.batch_size",
    "train.lr",
    "train.momentum",
    "train.epochs",
    "train.seed",
    "train.clip",
    "train.max_examples",
    "generate.seed_frames",
    "generate.horizon",
    "generate.sample",
    "fill.iters",
    "fill.missing",
    "synth.kind",
    "synth.h",
    "synth.w",
    "synth.t",
    "synth.velocity",
    "synth.count",
    "synth.patch_exact",
    "synth.seed",
];

pub const MODEL_KINDS: &[&str] = &["bigram", "trigram", "nn", "rnn", "rcnn", "fill"];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

/// `none` or a value.
fn parse_opt<T: FromStr>(key: &str, v: &str, none: &str) -> Result<Option<T>> {
    if v == none {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

/// Empty means unset.
fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| v.into())
}

fn show_opt<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

impl RunConfig {
    /// Reads a config file. Paths are checked by [`RunConfig::check_paths`]
    /// once command-line overrides have been applied.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), n + 1) {
                return Err(Error::Config(format!("line {}: {k} already set on line {prev}", n + 1)));
            }
            cfg.set(k, v.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data.train" => self.train_dir = opt_path(v),
            "data.valid" => self.valid_dir = opt_path(v),
            "data.test" => self.test_dir = opt_path(v),
            "out" => self.out_dir = v.into(),
            "seed" => self.seed = parse(key, v)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "codebook.k" => self.codebook_k = parse(key, v)?,
            "codebook.patch" => self.codebook_patch = parse(key, v)?,
            "codebook.sample_cap" => self.codebook_sample_cap = parse(key, v)?,
            "codebook.max_iters" => self.codebook_max_iters = parse(key, v)?,
            "codebook.seed" => self.codebook_seed = Some(parse(key, v)?),
            "codebook.path" => self.codebook_path = opt_path(v),
            "quantize.train_offsets" => self.quantize_train_offsets = parse(key, v)?,
            "model.kind" => {
                if !MODEL_KINDS.contains(&v) {
                    return Err(Error::Config(format!(
                        "model.kind must be one of {}, got {v:?}",
                        MODEL_KINDS.join(", ")
                    )));
                }
                self.model_kind = Some(v.to_string());
            }
            "model.order" => self.model_order = parse(key, v)?,
            "model.embed_dim" => self.model_embed_dim = Some(parse(key, v)?),
            "model.hidden_dim" => self.model_hidden_dim = parse(key, v)?,
            "model.maps" => self.model_maps = parse(key, v)?,
            "model.crop" => self.model_crop = parse_opt(key, v, "full")?,
            "train.bptt_steps" => self.train.bptt_steps = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.learning_rate = parse(key, v)?,
            "train.momentum" => self.train.momentum = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.seed" => self.train_seed = Some(parse(key, v)?),
            "train.clip" => self.train.clip_threshold = parse_opt(key, v, "none")?,
            "train.max_examples" => self.train.max_examples_per_epoch = parse_opt(key, v, "all")?,
            "generate.seed_frames" => self.generate_seed_frames = parse(key, v)?,
            "generate.horizon" => self.generate_horizon = parse(key, v)?,
            "generate.sample" => self.generate_sample = parse_bool(key, v)?,
            "fill.iters" => self.fill_iters = parse(key, v)?,
            "fill.missing" => self.fill_missing = parse_list(key, v)?,
            "synth.kind" => self.synth_kind = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "synth.h" => self.synth_h = parse(key, v)?,
            "synth.w" => self.synth_w = parse(key, v)?,
            "synth.t" => self.synth_t = parse(key, v)?,
            "synth.velocity" => self.synth_velocity = parse(key, v)?,
            "synth.count" => self.synth_count = parse(key, v)?,
            "synth.patch_exact" => self.synth_patch_exact = parse_opt(key, v, "none")?,
            "synth.seed" => self.synth_seed = Some(parse(key, v)?),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of `key` in the form `set` accepts; empty when unset.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "data.train" => show_path(&self.train_dir),
            "data.valid" => show_path(&self.valid_dir),
            "data.test" => show_path(&self.test_dir),
            "out" => self.out_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "deterministic" => self.deterministic.to_string(),
            "codebook.k" => self.codebook_k.to_string(),
            "codebook.patch" => self.codebook_patch.to_string(),
            "codebook.sample_cap" => self.codebook_sample_cap.to_string(),
            "codebook.max_iters" => self.codebook_max_iters.to_string(),
            "codebook.seed" => self.codebook_seed().to_string(),
            "codebook.path" => show_path(&self.codebook_path),
            "quantize.train_offsets" => self.quantize_train_offsets.to_string(),
            "model.kind" => self.model_kind.clone().unwrap_or_default(),
            "model.order" => self.model_order.to_string(),
            "model.embed_dim" => show_opt(&self.model_embed_dim, ""),
            "model.hidden_dim" => self.model_hidden_dim.to_string(),
            "model.maps" => self.model_maps.to_string(),
            "model.crop" => show_opt(&self.model_crop, "full"),
            "train.bptt_steps" => t.bptt_steps.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.lr" => t.learning_rate.to_string(),
            "train.momentum" => t.momentum.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.seed" => self.train_seed().to_string(),
            "train.clip" => show_opt(&t.clip_threshold, "none"),
            "train.max_examples" => show_opt(&t.max_examples_per_epoch, "all"),
            "generate.seed_frames" => self.generate_seed_frames.to_string(),
            "generate.horizon" => self.generate_horizon.to_string(),
            "generate.sample" => self.generate_sample.to_string(),
            "fill.iters" => self.fill_iters.to_string(),
            "fill.missing" => self
                .fill_missing
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "synth.kind" => self.synth_kind.name().to_string(),
            "synth.h" => self.synth_h.to_string(),
            "synth.w" => self.synth_w.to_string(),
            "synth.t" => self.synth_t.to_string(),
            "synth.velocity" => self.synth_velocity.to_string(),
            "synth.count" => self.synth_count.to_string(),
            "synth.patch_exact" => show_opt(&self.synth_patch_exact, "none"),
            "synth.seed" => self.synth_seed().to_string(),
            _ => return None,
        })
    }

    /// Every set key with its effective value, one `key = value` per line in
    /// canonical order. The output directory is left out so that identical
    /// runs into different directories hash the same.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS.iter().filter(|&&k| k != "out") {
            let v = self.get(k).expect("listed key");
            if !v.is_empty() {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }

    pub fn codebook_seed(&self) -> u64 {
        self.codebook_seed.unwrap_or_else(|| derive_seed(self.seed, "codebook"))
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed.unwrap_or_else(|| derive_seed(self.seed, "train"))
    }

    pub fn synth_seed(&self) -> u64 {
        self.synth_seed.unwrap_or_else(|| derive_seed(self.seed, "synth"))
    }

    /// Training settings with the resolved seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.train_seed(),
            ..self.train.clone()
        }
    }

    /// Errors if a referenced input path does not exist.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = [
            ("data.train", &self.train_dir),
            ("data.valid", &self.valid_dir),
            ("data.test", &self.test_dir),
            ("codebook.path", &self.codebook_path),
        ];
        for (k, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("{k}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_k == 0 || self.codebook_patch == 0 || self.codebook_sample_cap == 0 {
            return Err(Error::Config("codebook.k, codebook.patch and codebook.sample_cap must be positive".into()));
        }
        if self.quantize_train_offsets == 0 || self.quantize_train_offsets > self.codebook_patch * self.codebook_patch {
            return Err(Error::Config(format!(
                "quantize.train_offsets must lie in 1..={}",
                self.codebook_patch * self.codebook_patch
            )));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_defaults() {
        let c = RunConfig::parse_str("# run\ncodebook.k = 64\n\ntrain.lr=0.01\nmodel.crop = full\ntrain.clip = none\nfill.missing = 3, 4,5\n").unwrap();
        assert_eq!(c.codebook_k, 64);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.model_crop, None);
        assert_eq!(c.train.clip_threshold, None);
        assert_eq!(c.fill_missing, vec![3, 4, 5]);
        assert_eq!(c.train.bptt_steps, 8);
        assert_eq!(c.codebook_patch, 8);
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        assert!(matches!(RunConfig::parse_str("train.learning_rate = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse_str("seed = 1\nseed = 2"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse_str("seed"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse_str("model.kind = lstm"), Err(Error::Config(_))));
    }

    #[test]
    fn missing_paths_are_rejected() {
        let c = RunConfig::parse_str("data.train = /definitely/not/here").unwrap();
        assert!(matches!(c.check_paths(), Err(Error::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::parse_str(&format!("data.train = {}", dir.path().display())).unwrap();
        c.check_paths().unwrap();
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::parse_str("seed = 5\nmodel.kind = rcnn\ntrain.max_examples = 100").unwrap();
        c.set("synth.patch_exact", "8").unwrap();
        let text = c.canonical_text();
        let back = RunConfig::parse_str(&text).unwrap();
        assert_eq!(back.canonical_text(), text);
        assert_eq!(back.train_config(), c.train_config());
        let mut moved = c.clone();
        moved.out_dir = "elsewhere".into();
        assert_eq!(moved.canonical_text(), text);
        for k in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }
}
