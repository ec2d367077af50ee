use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vidlang::dataio::manifest::{sha256_file, Manifest};
use vidlang::tasks::EvalReport;

fn vidlang(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidlang"))
        .args(args)
        .env_remove("VLM_DETERMINISTIC")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = vidlang(args);
    assert!(
        o.status.success(),
        "{args:?} exited {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Synthesizes train/valid/test videos under `dir/data` and writes a config
/// pointing at them.
fn setup(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let synth_out = dir.join("synth");
    let cfg = dir.join("c.cfg");
    let text = format!(
        "# small run\nseed = 4\n\
         synth.kind = translate_texture\nsynth.h = 80\nsynth.w = 80\nsynth.t = 20\nsynth.velocity = 8\nsynth.patch_exact = 8\n\
         codebook.max_iters = 10\n\
         model.embed_dim = 4\nmodel.maps = 4\n\
         train.epochs = 1\ntrain.batch_size = 8\ntrain.max_examples = 64\n"
    );
    fs::write(&cfg, &text).unwrap();
    let c = cfg.to_str().unwrap();
    let d = synth_out.to_str().unwrap();
    for (split, n) in [("train", "12"), ("valid", "2"), ("test", "1")] {
        ok(&["synth", "--config", c, "--out", d, "--split", split, "--count", n]);
    }
    fs::rename(synth_out.join("data"), &data).unwrap();
    let mut text = text;
    for split in ["train", "valid", "test"] {
        text.push_str(&format!("data.{split} = {}/{split}\n", data.display()));
    }
    fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn bigram_pipeline_stays_below_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    let base = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let run = |extra: &[&str]| {
        let mut a = extra.to_vec();
        a.extend_from_slice(&base);
        ok(&a)
    };
    run(&["fit-codebook", "--k", "16"]);
    run(&["quantize"]);
    run(&["train", "--model", "bigram"]);
    let line = run(&["eval", "--model", "bigram"]);
    let r: EvalReport = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(r.model, "bigram");
    assert_eq!(r.split, "valid");
    assert!(r.bits_per_patch < 4.0, "{}", r.bits_per_patch);
    assert!(((r.perplexity - r.bits_per_patch.exp2()) / r.perplexity).abs() < 1e-9);
    let saved = fs::read_to_string(out.join("reports/eval-bigram-valid.jsonl")).unwrap();
    assert_eq!(saved.trim(), line.trim());

    // every manifest lists real files with their current hashes
    for e in fs::read_dir(out.join("manifest")).unwrap() {
        let m = Manifest::load(&e.unwrap().path()).unwrap();
        assert_eq!(m.seeds["seed"], 4);
        assert_eq!(m.config_sha256.len(), 64);
        for a in m.artifacts.iter().chain(&m.inputs) {
            assert_eq!(sha256_file(&out.join(&a.path)).unwrap(), a.sha256, "{}", a.path);
        }
    }
    let m = Manifest::load(&out.join("manifest/train-bigram.json")).unwrap();
    assert_eq!(m.artifacts[0].path, "models/bigram.vlmn");
    assert!(m.inputs.iter().any(|i| i.path == "codebook.vlmc"));
}

#[test]
fn generate_writes_frames_and_stillness_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    let base = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for step in [&["fit-codebook", "--k", "16"][..], &["quantize"], &["train", "--model", "rcnn"]] {
        let mut a = step.to_vec();
        a.extend_from_slice(&base);
        ok(&a);
    }
    let mut a = vec!["generate", "--seed-frames", "12", "--horizon", "4"];
    a.extend_from_slice(&base);
    ok(&a);
    let mut frames: Vec<String> = fs::read_dir(out.join("generated"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    frames.sort();
    assert_eq!(frames, ["frame_000000.pgm", "frame_000001.pgm", "frame_000002.pgm", "frame_000003.pgm"]);
    let head = fs::read(out.join("generated/frame_000000.pgm")).unwrap();
    assert!(head.starts_with(b"P5\n80 80\n255\n"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("reports/generate.json")).unwrap()).unwrap();
    assert!(report.get("stillness_index").is_some());
    assert_eq!(report["interior_atom_accuracy"].as_array().unwrap().len(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(vidlang(&["transmogrify"]).status.code(), Some(64));
    assert_eq!(vidlang(&["eval", "--frobnicate"]).status.code(), Some(64));
    assert_eq!(vidlang(&["--help"]).status.code(), Some(0));
    // unknown config key: contract error
    assert_eq!(vidlang(&["quantize", "--out", out, "--set", "train.speed=3"]).status.code(), Some(1));
    // missing config file: IO error
    let missing = dir.path().join("nope.cfg");
    assert_eq!(vidlang(&["quantize", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    // corrupt codebook: format error
    fs::write(dir.path().join("codebook.vlmc"), b"VLMCjunk").unwrap();
    let o = vidlang(&["quantize", "--out", out, "--set", &format!("data.train={out}")]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    // data path that does not exist
    assert_eq!(vidlang(&["fit-codebook", "--out", out, "--set", "data.train=/no/such/dir"]).status.code(), Some(1));
}
