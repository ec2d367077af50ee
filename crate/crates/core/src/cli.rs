//! Command-line front end. Every subcommand reads a [`RunConfig`], applies
//! flag overrides, writes artifacts under the output directory and records a
//! manifest in `<out>/manifest/`.
//!
//! Output layout:
//!
//! ```text
//! <out>/data/<split>/video_NNNN/frame_NNNNNN.pgm   synth
//! <out>/codebook.vlmc                              fit-codebook
//! <out>/quantized/<split>/<video>.vlmq             quantize
//! <out>/models/<kind>.vlmn | <kind>.vlmm           train
//! <out>/reports/*.json, *.jsonl                    every evaluating command
//! <out>/generated/frame_NNNNNN.pgm                 generate
//! <out>/filled/frame_NNNNNN.pgm                    fill
//! <out>/viz/                                       viz-embeddings, viz-units
//! <out>/manifest/<command>[-<kind>].json
//! ```

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::dataio::checkpoint::Checkpoint;
use crate::dataio::config::RunConfig;
use crate::dataio::fsutil::write_atomic;
use crate::dataio::manifest::Manifest;
use crate::dataio::pgm::{frame_file_name, load_pgm_sequence, save_pgm, save_pgm_sequence};
use crate::error::{Error, Result};
use crate::neural_lms::{train_nnlm, train_rnn, Nnlm, Rnn, TrainCurves};
use crate::ngram::{fit_ngram, NGramModel};
use crate::numerics::{derive_seed, DetRng, Tensor};
use crate::quantizer::{
    encode_video_at, fit_codebook, preprocess, quantization_rmse, sample_patches, Codebook,
    QuantizedVideo, Video,
};
use crate::rcnn::{train_rcnn, CropSpec, Rcnn, RCNN_MARGIN};
use crate::synth::{synth_video, SynthSpec};
use crate::tasks::{
    centroid_strip, diagnose_static_dynamic, embedding_neighbors, evaluate, fill_frames, generate, hits_image,
    linear_interpolation_baseline, model_rmse, top_activating_patches, train_filling_model, EvalReport,
    FillingModel, FramePredictor, GenerateConfig,
};

/// Exit status for malformed command lines.
pub const EXIT_USAGE: i32 = 64;

const DEFAULT_NN_EMBED: usize = 128;
const DEFAULT_RCNN_EMBED: usize = 32;
const DEFAULT_FILL_EMBED: usize = 32;

#[derive(Parser, Debug)]
#[command(name = "vidlang", version, about = "Quantize grayscale video into patch atoms and model atom sequences")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides a config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Global seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Record the run as deterministic (same as `VLM_DETERMINISTIC=1`).
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Bigram,
    Trigram,
    Nn,
    Rnn,
    Rcnn,
    Fill,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Bigram => "bigram",
            Kind::Trigram => "trigram",
            Kind::Nn => "nn",
            Kind::Rnn => "rnn",
            Kind::Rcnn => "rcnn",
            Kind::Fill => "fill",
        }
    }

    fn file_name(self) -> String {
        match self {
            Kind::Bigram | Kind::Trigram => format!("{}.vlmn", self.name()),
            _ => format!("{}.vlmm", self.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic PGM videos to <out>/data/<split>/.
    Synth {
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Fit the patch codebook on the training videos.
    FitCodebook {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Encode every configured split with the codebook.
    Quantize {
        /// Grid offsets per training video, the aligned grid first.
        #[arg(long)]
        train_offsets: Option<usize>,
    },
    /// Train a model on the quantized training split.
    Train {
        #[arg(long, value_enum)]
        model: Option<Kind>,
    },
    /// Bits per patch and perplexity on a quantized split.
    Eval {
        #[arg(long, value_enum)]
        model: Option<Kind>,
        #[arg(long, value_enum, default_value = "valid")]
        split: Split,
    },
    /// Pixel RMSE of one-step predictions against the quantization floor.
    Rmse {
        #[arg(long, value_enum)]
        model: Option<Kind>,
        #[arg(long, value_enum, default_value = "valid")]
        split: Split,
    },
    /// Extend a real clip with rCNN-generated frames.
    Generate {
        #[arg(long)]
        seed_frames: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Sample atoms instead of taking the most likely one.
        #[arg(long)]
        sample: bool,
        /// Source split; defaults to the first configured of test, valid, train.
        #[arg(long, value_enum)]
        split: Option<Split>,
        /// Index of the source video within the split.
        #[arg(long, default_value_t = 0)]
        video: usize,
    },
    /// Reconstruct missing frames with the filling model.
    Fill {
        /// Missing frame indices, comma separated.
        #[arg(long, value_delimiter = ',')]
        missing: Vec<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_enum)]
        split: Option<Split>,
        #[arg(long, default_value_t = 0)]
        video: usize,
    },
    /// Perplexity under static, permuted and reordered inputs.
    Diagnose {
        #[arg(long, value_enum)]
        model: Option<Kind>,
        #[arg(long, value_enum, default_value = "valid")]
        split: Split,
    },
    /// Nearest neighbours of an atom in a model's embedding.
    VizEmbeddings {
        #[arg(long, value_enum)]
        model: Option<Kind>,
        #[arg(long)]
        atom: usize,
        #[arg(long, default_value_t = 8)]
        m: usize,
    },
    /// Atom neighbourhoods that most excite an rCNN first-layer map.
    VizUnits {
        #[arg(long, default_value_t = 0)]
        map: usize,
        #[arg(long, default_value_t = 16)]
        m: usize,
        #[arg(long, value_enum, default_value = "valid")]
        split: Split,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let threads = match std::env::var("VLM_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                eprintln!("error: VLM_THREADS must be a non-negative integer, got {s:?}");
                return EXIT_USAGE;
            }
        },
        Err(_) => 0,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.deterministic || std::env::var("VLM_DETERMINISTIC").is_ok_and(|v| v == "1") {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn resolve_kind(cfg: &mut RunConfig, flag: Option<Kind>) -> Result<Kind> {
    if let Some(k) = flag {
        cfg.set("model.kind", k.name())?;
        return Ok(k);
    }
    let name = cfg
        .model_kind
        .clone()
        .ok_or_else(|| Error::Config("no model given: pass --model or set model.kind".into()))?;
    Ok(Kind::from_str(&name, false).expect("model.kind is validated on set"))
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli.common)?;
    // command flags override the config; the manifest name may carry the model kind
    let name = match &cli.cmd {
        Command::Synth { count, .. } => {
            if let Some(c) = count {
                cfg.synth_count = *c;
            }
            "synth".to_string()
        }
        Command::FitCodebook { k } => {
            if let Some(k) = k {
                cfg.codebook_k = *k;
            }
            "fit-codebook".to_string()
        }
        Command::Quantize { train_offsets } => {
            if let Some(n) = train_offsets {
                cfg.quantize_train_offsets = *n;
            }
            "quantize".to_string()
        }
        Command::Train { model } => format!("train-{}", resolve_kind(&mut cfg, *model)?.name()),
        Command::Eval { model, split } => {
            format!("eval-{}-{}", resolve_kind(&mut cfg, *model)?.name(), split.name())
        }
        Command::Rmse { model, split } => {
            format!("rmse-{}-{}", resolve_kind(&mut cfg, *model)?.name(), split.name())
        }
        Command::Generate {
            seed_frames,
            horizon,
            sample,
            ..
        } => {
            if let Some(s) = seed_frames {
                cfg.generate_seed_frames = *s;
            }
            if let Some(h) = horizon {
                cfg.generate_horizon = *h;
            }
            cfg.generate_sample |= *sample;
            "generate".to_string()
        }
        Command::Fill { missing, iters, .. } => {
            if !missing.is_empty() {
                cfg.fill_missing = missing.clone();
            }
            if let Some(i) = iters {
                cfg.fill_iters = *i;
            }
            "fill".to_string()
        }
        Command::Diagnose { model, split } => {
            format!("diagnose-{}-{}", resolve_kind(&mut cfg, *model)?.name(), split.name())
        }
        Command::VizEmbeddings { model, .. } => {
            format!("viz-embeddings-{}", resolve_kind(&mut cfg, *model)?.name())
        }
        Command::VizUnits { .. } => "viz-units".to_string(),
    };
    cfg.check_paths()?;
    cfg.validate()?;
    let mut ctx = Ctx::new(&name, cfg);
    match cli.cmd {
        Command::Synth { split, .. } => cmd_synth(&mut ctx, split)?,
        Command::FitCodebook { .. } => cmd_fit_codebook(&mut ctx)?,
        Command::Quantize { .. } => cmd_quantize(&mut ctx)?,
        Command::Train { .. } => cmd_train(&mut ctx)?,
        Command::Eval { split, .. } => cmd_eval(&mut ctx, split)?,
        Command::Rmse { split, .. } => cmd_rmse(&mut ctx, split)?,
        Command::Generate { split, video, .. } => cmd_generate(&mut ctx, split, video)?,
        Command::Fill { split, video, .. } => cmd_fill(&mut ctx, split, video)?,
        Command::Diagnose { split, .. } => cmd_diagnose(&mut ctx, split)?,
        Command::VizEmbeddings { atom, m, .. } => cmd_viz_embeddings(&mut ctx, atom, m)?,
        Command::VizUnits { map, m, split } => cmd_viz_units(&mut ctx, map, m, split)?,
    }
    ctx.finish(&name)
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    manifest: Manifest,
}

impl Ctx {
    fn new(command: &str, cfg: RunConfig) -> Self {
        let mut manifest = Manifest::new(command, &cfg.canonical_text(), cfg.deterministic);
        manifest.seed("seed", cfg.seed);
        let out = cfg.out_dir.clone();
        Ctx { cfg, out, manifest }
    }

    fn kind(&self) -> Kind {
        Kind::from_str(self.cfg.model_kind.as_deref().unwrap_or_default(), false).expect("resolved before dispatch")
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn artifact(&mut self, p: &Path) -> Result<()> {
        self.manifest.artifact(&self.out, p)
    }

    fn input(&mut self, p: &Path) -> Result<()> {
        self.manifest.input(&self.out, p)
    }

    fn write_json(&mut self, rel: &str, v: &Value) -> Result<()> {
        let p = self.path(rel);
        let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
        s.push('\n');
        write_atomic(&p, s.as_bytes())?;
        self.artifact(&p)
    }

    fn write_lines(&mut self, rel: &str, lines: &[String]) -> Result<()> {
        let p = self.path(rel);
        let mut s = String::new();
        for l in lines {
            s.push_str(l);
            s.push('\n');
        }
        write_atomic(&p, s.as_bytes())?;
        self.artifact(&p)
    }

    fn split_dir(&self, split: Split) -> Option<PathBuf> {
        match split {
            Split::Train => self.cfg.train_dir.clone(),
            Split::Valid => self.cfg.valid_dir.clone(),
            Split::Test => self.cfg.test_dir.clone(),
        }
    }

    fn require_split_dir(&self, split: Split) -> Result<PathBuf> {
        self.split_dir(split)
            .ok_or_else(|| Error::Config(format!("data.{} is not set", split.name())))
    }

    fn codebook(&mut self) -> Result<Codebook> {
        let p = self.cfg.codebook_path.clone().unwrap_or_else(|| self.path("codebook.vlmc"));
        let cb = Codebook::load(&p)?;
        self.input(&p)?;
        Ok(cb)
    }

    fn quantized(&mut self, split: Split) -> Result<Vec<QuantizedVideo>> {
        let dir = self.out.join("quantized").join(split.name());
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(&dir, e)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|x| x == "vlmq"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::format(&dir, "no .vlmq files; run `quantize` first"));
        }
        let mut out = Vec::with_capacity(files.len());
        for f in &files {
            out.push(QuantizedVideo::load(f)?);
            self.input(f)?;
        }
        Ok(out)
    }

    fn model(&mut self, kind: Kind) -> Result<Model> {
        let p = self.out.join("models").join(kind.file_name());
        let m = match kind {
            Kind::Bigram | Kind::Trigram => {
                let m = NGramModel::load(&p)?;
                let want = if kind == Kind::Bigram { 2 } else { 3 };
                if m.order() != want {
                    return Err(Error::format(&p, format!("expected a {want}-gram model, found order {}", m.order())));
                }
                Model::NGram(m)
            }
            Kind::Nn => Model::Nn(Nnlm::from_checkpoint(&Checkpoint::load(&p)?)?),
            Kind::Rnn => Model::Rnn(Rnn::from_checkpoint(&Checkpoint::load(&p)?)?),
            Kind::Rcnn => Model::Rcnn(Rcnn::from_checkpoint(&Checkpoint::load(&p)?)?),
            Kind::Fill => Model::Fill(FillingModel::from_checkpoint(&Checkpoint::load(&p)?)?),
        };
        self.input(&p)?;
        Ok(m)
    }

    fn finish(mut self, name: &str) -> Result<()> {
        let c = &self.cfg;
        for (k, v) in [
            ("codebook", c.codebook_seed()),
            ("train", c.train_seed()),
            ("synth", c.synth_seed()),
        ] {
            self.manifest.seed(k, v);
        }
        let p = self.out.join("manifest").join(format!("{name}.json"));
        self.manifest.save(&p)
    }
}

enum Model {
    NGram(NGramModel),
    Nn(Nnlm),
    Rnn(Rnn),
    Rcnn(Rcnn),
    Fill(FillingModel),
}

impl Model {
    fn predictor(&self) -> Result<&dyn FramePredictor> {
        Ok(match self {
            Model::NGram(m) => m,
            Model::Nn(m) => m,
            Model::Rnn(m) => m,
            Model::Rcnn(m) => m,
            Model::Fill(_) => return Err(Error::contract("the filling model does not predict next frames")),
        })
    }

    fn embedding(&self) -> Result<&Tensor> {
        Ok(match self {
            Model::NGram(_) => return Err(Error::contract("n-gram models have no embedding")),
            Model::Nn(m) => m.embedding(),
            Model::Rnn(m) => m.embedding(),
            Model::Rcnn(m) => m.embedding(),
            Model::Fill(m) => m.embedding(),
        })
    }

    fn rcnn(self) -> Result<Rcnn> {
        match self {
            Model::Rcnn(m) => Ok(m),
            _ => Err(Error::contract("an rcnn model is required")),
        }
    }

    fn filling(self) -> Result<FillingModel> {
        match self {
            Model::Fill(m) => Ok(m),
            _ => Err(Error::contract("a fill model is required")),
        }
    }
}

/// A directory holding `frame_000000.pgm` is one video; otherwise each
/// subdirectory, in name order, is one video.
fn video_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let stem = |p: &Path| p.file_name().map_or_else(|| "video".to_string(), |n| n.to_string_lossy().into_owned());
    if dir.join(frame_file_name(0)).is_file() {
        return Ok(vec![(stem(dir), dir.to_path_buf())]);
    }
    let mut dirs = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            dirs.push((stem(&p), p));
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(dir, "no frame_000000.pgm and no video subdirectories"));
    }
    Ok(dirs)
}

/// Loads and normalizes every video under `dir`.
fn load_videos(dir: &Path) -> Result<Vec<(String, Video)>> {
    video_dirs(dir)?
        .par_iter()
        .map(|(name, p)| Ok((name.clone(), preprocess(&load_pgm_sequence(p)?)?)))
        .collect()
}

fn remove_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn curves_json(c: &TrainCurves) -> Value {
    json!({
        "initial_valid_bits": c.initial_valid_bits,
        "train_bits": c.train_bits,
        "valid_bits": c.valid_bits,
        "best_epoch": c.best_epoch,
        "best_valid_bits": c.best_valid_bits,
    })
}

/// Pixel RMSE on the 0–255 scale over whole frames `frames`.
fn frames_rmse(truth: &Video, other: &Video, frames: &[usize]) -> f64 {
    let fl = truth.frame_len();
    let mut se = 0.0;
    for &t in frames {
        for (a, b) in truth.frame(t).iter().zip(other.frame(t)) {
            se += ((a - b) as f64 * truth.norm_std).powi(2);
        }
    }
    (se / (frames.len() * fl) as f64).sqrt()
}

fn cmd_synth(ctx: &mut Ctx, split: Split) -> Result<()> {
    let c = &ctx.cfg;
    let base = c.synth_seed();
    let specs: Vec<SynthSpec> = (0..c.synth_count)
        .map(|i| {
            let s = SynthSpec::new(
                c.synth_kind,
                c.synth_h,
                c.synth_w,
                c.synth_t,
                c.synth_velocity,
                derive_seed(base, &format!("{}/{i}", split.name())),
            );
            match c.synth_patch_exact {
                Some(p) => s.patch_exact(p),
                None => s,
            }
        })
        .collect();
    for s in &specs {
        s.validate()?;
    }
    let root = ctx.out.join("data").join(split.name());
    remove_dir(&root)?;
    let written: Vec<Vec<PathBuf>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| save_pgm_sequence(&synth_video(s)?, &root.join(format!("video_{i:04}"))))
        .collect::<Result<_>>()?;
    for p in written.iter().flatten() {
        ctx.artifact(p)?;
    }
    println!("wrote {} videos to {}", specs.len(), root.display());
    Ok(())
}

fn cmd_fit_codebook(ctx: &mut Ctx) -> Result<()> {
    let dir = ctx.require_split_dir(Split::Train)?;
    let videos: Vec<Video> = load_videos(&dir)?.into_iter().map(|(_, v)| v).collect();
    let c = &ctx.cfg;
    let seed = c.codebook_seed();
    let mut rng = DetRng::new(seed).split("sample");
    let patches = sample_patches(&videos, c.codebook_patch, c.codebook_patch, c.codebook_sample_cap, &mut rng)?;
    let (cb, trace) = fit_codebook(&patches, c.codebook_k, c.codebook_max_iters, seed)?;
    let p = ctx.path("codebook.vlmc");
    cb.save(&p)?;
    ctx.artifact(&p)?;
    let report = json!({
        "k": cb.k(),
        "patch": ctx.cfg.codebook_patch,
        "patches": patches.len(),
        "iterations": trace.iterations,
        "converged": trace.converged,
        "reseeded": trace.reseeded,
        "distortions": trace.distortions,
    });
    ctx.write_json("reports/codebook.json", &report)?;
    println!("codebook k={} fitted on {} patches in {} iterations", cb.k(), patches.len(), trace.iterations);
    Ok(())
}

fn cmd_quantize(ctx: &mut Ctx) -> Result<()> {
    let cb = ctx.codebook()?;
    let offsets_seed = derive_seed(ctx.cfg.seed, "offsets");
    ctx.manifest.seed("offsets", offsets_seed);
    let mut rng = DetRng::new(offsets_seed);
    let (ph, pw) = (cb.patch_h(), cb.patch_w());
    let mut summary = serde_json::Map::new();
    for split in [Split::Train, Split::Valid, Split::Test] {
        let Some(dir) = ctx.split_dir(split) else { continue };
        let videos = load_videos(&dir)?;
        let n_off = if split == Split::Train { ctx.cfg.quantize_train_offsets } else { 1 };
        let mut jobs = Vec::new();
        for (name, v) in &videos {
            for a in 0..n_off {
                let (dy, dx) = if a == 0 { (0, 0) } else { (rng.gen_range(0..ph), rng.gen_range(0..pw)) };
                let file = if a == 0 { format!("{name}.vlmq") } else { format!("{name}@{a}-{dy}-{dx}.vlmq") };
                jobs.push((v, dy, dx, file));
            }
        }
        let root = ctx.out.join("quantized").join(split.name());
        remove_dir(&root)?;
        let encoded = jobs
            .par_iter()
            .map(|(v, dy, dx, file)| {
                let q = encode_video_at(v, &cb, *dy, *dx)?;
                let p = root.join(file);
                q.save(&p)?;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        for p in &encoded {
            ctx.artifact(p)?;
        }
        let rmse: Vec<f64> = videos
            .par_iter()
            .map(|(_, v)| quantization_rmse(v, &cb))
            .collect::<Result<_>>()?;
        let mean = rmse.iter().sum::<f64>() / rmse.len() as f64;
        summary.insert(
            split.name().into(),
            json!({"videos": videos.len(), "files": encoded.len(), "quantization_rmse_0_255": mean}),
        );
        println!("{}: {} videos, {} files, quantization RMSE {mean:.3}", split.name(), videos.len(), encoded.len());
    }
    if summary.is_empty() {
        return Err(Error::Config("no data.* split is set".into()));
    }
    ctx.write_json("reports/quantize.json", &Value::Object(summary))
}

fn cmd_train(ctx: &mut Ctx) -> Result<()> {
    let kind = ctx.kind();
    let vocab = ctx.codebook()?.k();
    let train = ctx.quantized(Split::Train)?;
    let c = ctx.cfg.clone();
    let tc = c.train_config();
    let init = derive_seed(tc.seed, "init");
    let path = ctx.out.join("models").join(kind.file_name());
    let needs_valid = !matches!(kind, Kind::Bigram | Kind::Trigram);
    let valid = if needs_valid { ctx.quantized(Split::Valid)? } else { Vec::new() };
    let report = match kind {
        Kind::Bigram | Kind::Trigram => {
            let n = if kind == Kind::Bigram { 2 } else { 3 };
            let m = fit_ngram(&train, n, vocab)?;
            m.save(&path)?;
            json!({"model": kind.name(), "entries": m.entries()})
        }
        Kind::Nn => {
            let e = c.model_embed_dim.unwrap_or(DEFAULT_NN_EMBED);
            let mut m = Nnlm::new(vocab, c.model_order, e, c.model_hidden_dim, init)?;
            let curves = train_nnlm(&mut m, &train, &tc, &valid)?;
            m.to_checkpoint().save(&path)?;
            json!({"model": "nn", "curves": curves_json(&curves)})
        }
        Kind::Rnn => {
            let mut m = Rnn::new(vocab, c.model_hidden_dim, init)?;
            let curves = train_rnn(&mut m, &train, &tc, &valid)?;
            m.to_checkpoint().save(&path)?;
            json!({"model": "rnn", "curves": curves_json(&curves)})
        }
        Kind::Rcnn => {
            let e = c.model_embed_dim.unwrap_or(DEFAULT_RCNN_EMBED);
            let mut m = Rcnn::new(vocab, e, c.model_maps, init)?;
            let curves = train_rcnn(&mut m, &train, &tc, CropSpec { size: c.model_crop }, &valid)?;
            m.to_checkpoint().save(&path)?;
            json!({"model": "rcnn", "curves": curves_json(&curves)})
        }
        Kind::Fill => {
            let e = c.model_embed_dim.unwrap_or(DEFAULT_FILL_EMBED);
            let mut m = FillingModel::new(vocab, e, c.model_hidden_dim, init)?;
            let curves = train_filling_model(&mut m, &train, &tc, &valid)?;
            m.to_checkpoint().save(&path)?;
            json!({"model": "fill", "curves": curves_json(&curves)})
        }
    };
    ctx.artifact(&path)?;
    ctx.write_json(&format!("reports/train-{}.json", kind.name()), &report)?;
    println!("trained {} -> {}", kind.name(), path.display());
    Ok(())
}

fn cmd_eval(ctx: &mut Ctx, split: Split) -> Result<()> {
    let kind = ctx.kind();
    let model = ctx.model(kind)?;
    let corpus = ctx.quantized(split)?;
    let report = match &model {
        Model::Fill(m) => {
            let (nats, n) = m.corpus_nats(&corpus)?;
            if n == 0 {
                return Err(Error::InsufficientData("no fillable cell in the split".into()));
            }
            EvalReport::new("fill", split.name(), nats / n as f64 / std::f64::consts::LN_2, n)
        }
        m => {
            let mut r = evaluate(m.predictor()?, &corpus, split.name(), None)?;
            r.model = kind.name().into();
            r
        }
    };
    let line = report.to_json_line();
    println!("{line}");
    ctx.write_lines(&format!("reports/eval-{}-{}.jsonl", kind.name(), split.name()), &[line])
}

fn cmd_rmse(ctx: &mut Ctx, split: Split) -> Result<()> {
    let kind = ctx.kind();
    let model = ctx.model(kind)?;
    let predictor = model.predictor()?;
    let cb = ctx.codebook()?;
    let videos = load_videos(&ctx.require_split_dir(split)?)?;
    let mut lines = Vec::new();
    let (mut sm, mut sf, mut n) = (0.0, 0.0, 0usize);
    for (name, v) in &videos {
        let r = model_rmse(predictor, v, &cb)?;
        sm += r.model_rmse.powi(2) * r.pixel_count as f64;
        sf += r.floor_rmse.powi(2) * r.pixel_count as f64;
        n += r.pixel_count;
        lines.push(
            json!({"model": kind.name(), "split": split.name(), "video": name,
                   "model_rmse": r.model_rmse, "floor_rmse": r.floor_rmse, "pixel_count": r.pixel_count})
            .to_string(),
        );
    }
    let n = n.max(1) as f64;
    let total = json!({"model": kind.name(), "split": split.name(), "video": null,
        "model_rmse": (sm / n).sqrt(), "floor_rmse": (sf / n).sqrt(), "pixel_count": n as usize})
    .to_string();
    println!("{total}");
    lines.push(total);
    ctx.write_lines(&format!("reports/rmse-{}-{}.jsonl", kind.name(), split.name()), &lines)
}

fn source_video(ctx: &Ctx, split: Option<Split>, index: usize) -> Result<(String, Video)> {
    let split = match split {
        Some(s) => s,
        None => [Split::Test, Split::Valid, Split::Train]
            .into_iter()
            .find(|&s| ctx.split_dir(s).is_some())
            .ok_or_else(|| Error::Config("no data.* split is set".into()))?,
    };
    let dirs = video_dirs(&ctx.require_split_dir(split)?)?;
    let (name, p) = dirs.get(index).ok_or(Error::Index {
        what: "video",
        index,
        limit: dirs.len(),
    })?;
    Ok((name.clone(), preprocess(&load_pgm_sequence(p)?)?))
}

fn cmd_generate(ctx: &mut Ctx, split: Option<Split>, index: usize) -> Result<()> {
    let model = ctx.model(Kind::Rcnn)?.rcnn()?;
    let cb = ctx.codebook()?;
    let (name, video) = source_video(ctx, split, index)?;
    let c = &ctx.cfg;
    if video.t < c.generate_seed_frames {
        return Err(Error::InsufficientData(format!(
            "{name} has {} frames, {} seed frames requested",
            video.t, c.generate_seed_frames
        )));
    }
    let sample_seed = c.generate_sample.then(|| derive_seed(c.seed, "sample"));
    let cfg = GenerateConfig {
        seed_frames: c.generate_seed_frames,
        horizon: c.generate_horizon,
        sample_seed,
    };
    if let Some(s) = sample_seed {
        ctx.manifest.seed("sample", s);
    }
    let seed = video.slice_frames(0, cfg.seed_frames)?;
    let g = generate(&model, &seed, &cb, &cfg)?;
    let dir = ctx.path("generated");
    remove_dir(&dir)?;
    for p in save_pgm_sequence(&g.frames, &dir)? {
        ctx.artifact(&p)?;
    }
    // scored only when the source clip extends past the seed
    let end = cfg.seed_frames + cfg.horizon;
    let mut accuracy = Vec::new();
    let mut rmse = Vec::new();
    if video.t >= end {
        let truth = video.slice_frames(cfg.seed_frames, end)?;
        let coded: Vec<QuantizedVideo> = g
            .grids
            .par_iter()
            .map(|((dy, dx), _)| encode_video_at(&truth, &cb, *dy, *dx))
            .collect::<Result<_>>()?;
        for t in 0..cfg.horizon {
            let (mut hit, mut tot) = (0usize, 0usize);
            for ((_, q), tq) in g.grids.iter().zip(&coded) {
                for i in RCNN_MARGIN..q.hc.saturating_sub(RCNN_MARGIN) {
                    for j in RCNN_MARGIN..q.wc.saturating_sub(RCNN_MARGIN) {
                        tot += 1;
                        hit += usize::from(q.get(t, i, j) == tq.get(t, i, j));
                    }
                }
            }
            accuracy.push(hit as f64 / tot.max(1) as f64);
            rmse.push(frames_rmse(&truth, &g.frames, &[t]));
        }
    }
    let report = json!({
        "video": name,
        "seed_frames": cfg.seed_frames,
        "horizon": cfg.horizon,
        "sampled": sample_seed.is_some(),
        "stillness_index": g.stillness_index,
        "interior_atom_accuracy": accuracy,
        "rmse_0_255": rmse,
    });
    println!("{report}");
    ctx.write_json("reports/generate.json", &report)
}

fn cmd_fill(ctx: &mut Ctx, split: Option<Split>, index: usize) -> Result<()> {
    let model = ctx.model(Kind::Fill)?.filling()?;
    let cb = ctx.codebook()?;
    let (name, video) = source_video(ctx, split, index)?;
    let missing = ctx.cfg.fill_missing.clone();
    if missing.is_empty() {
        return Err(Error::Config("no missing frames: pass --missing or set fill.missing".into()));
    }
    let filled = fill_frames(&model, &video, &missing, &cb, ctx.cfg.fill_iters)?;
    let linear = linear_interpolation_baseline(&video, &missing)?;
    let dir = ctx.path("filled");
    remove_dir(&dir)?;
    for p in save_pgm_sequence(&filled, &dir)? {
        ctx.artifact(&p)?;
    }
    let report = json!({
        "video": name,
        "missing": missing,
        "iters": ctx.cfg.fill_iters,
        "fill_rmse_0_255": frames_rmse(&video, &filled, &missing),
        "linear_rmse_0_255": frames_rmse(&video, &linear, &missing),
    });
    println!("{report}");
    ctx.write_json("reports/fill.json", &report)
}

fn cmd_diagnose(ctx: &mut Ctx, split: Split) -> Result<()> {
    let kind = ctx.kind();
    let model = ctx.model(kind)?;
    let corpus = ctx.quantized(split)?;
    let seed = derive_seed(ctx.cfg.seed, "diagnose");
    ctx.manifest.seed("diagnose", seed);
    let reports = diagnose_static_dynamic(model.predictor()?, &corpus, seed)?;
    let lines: Vec<String> = reports
        .into_iter()
        .map(|mut r| {
            r.model = kind.name().into();
            r.split = split.name().into();
            r.to_json_line()
        })
        .collect();
    for l in &lines {
        println!("{l}");
    }
    ctx.write_lines(&format!("reports/diagnose-{}-{}.jsonl", kind.name(), split.name()), &lines)
}

fn cmd_viz_embeddings(ctx: &mut Ctx, atom: usize, m: usize) -> Result<()> {
    let kind = ctx.kind();
    let model = ctx.model(kind)?;
    let cb = ctx.codebook()?;
    let near = embedding_neighbors(model.embedding()?, atom, m)?;
    let mut row = vec![atom as u32];
    row.extend(near.iter().map(|&(a, _)| a));
    let (px, h, w) = centroid_strip(&cb, &[row])?;
    let stem = format!("viz/embeddings-{}-atom{atom}", kind.name());
    let img = ctx.path(&format!("{stem}.pgm"));
    save_pgm(&img, &px, h, w)?;
    ctx.artifact(&img)?;
    let report = json!({
        "model": kind.name(),
        "atom": atom,
        "neighbors": near.iter().map(|&(a, d)| json!({"atom": a, "distance": d})).collect::<Vec<_>>(),
    });
    ctx.write_json(&format!("{stem}.json"), &report)
}

fn cmd_viz_units(ctx: &mut Ctx, map: usize, m: usize, split: Split) -> Result<()> {
    let model = ctx.model(Kind::Rcnn)?.rcnn()?;
    let cb = ctx.codebook()?;
    let corpus = ctx.quantized(split)?;
    let hits = top_activating_patches(&model, 1, map, &corpus, m)?;
    let stem = format!("viz/units-map{map}");
    if !hits.is_empty() {
        let (px, h, w) = hits_image(&cb, &hits)?;
        let img = ctx.path(&format!("{stem}.pgm"));
        save_pgm(&img, &px, h, w)?;
        ctx.artifact(&img)?;
    }
    let report = json!({"map": map, "split": split.name(), "hits": hits});
    ctx.write_json(&format!("{stem}.json"), &report)
}
