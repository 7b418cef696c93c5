use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
corpus = "corpus"
recognizer_ckpt = "rec/recognizer.safetensors"
heldout_ckpt = "held/heldout.safetensors"
diffusion_ckpt = "diff/diffusion.safetensors"

[corpus_build]
vocab = "vocab.txt"
writers = 2
per_pair = 10

[recognizer]
batch_size = 4
steps = 3
eval_every = 3
eval_limit = 4

[recognizer.model]
height = 64
width = 256
channels = [2, 2, 2, 2]
hidden = 4

[diffusion]
batch_size = 2
steps = 2
sample_every = 0
checkpoint_every = 1
style_width = 4

[diffusion.schedule]
steps = 3
kind = "cosine"

[diffusion.denoiser]
base = 4
mults = [1, 1, 2]
groups = 2

[augmentation]
mix_total = 4
"#;

fn inkdiff(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inkdiff"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), TINY).unwrap();
    fs::write(dir.path().join("vocab.txt"), "ab\ncd\nef\n").unwrap();
    dir
}

fn ok(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON record")
}

#[test]
fn generate_without_ckpt_names_the_flag() {
    let dir = setup();
    let out = inkdiff(
        dir.path(),
        &[
            "generate",
            "--mode",
            "synthesis",
            "--text",
            "ab",
            "--out",
            "g",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    let err: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(err["error"], "missing_flag");
    assert!(err["message"].as_str().unwrap().contains("--ckpt"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = setup();
    let out = inkdiff(dir.path(), &["corpus", "build", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_config_file_fails() {
    let dir = setup();
    let out = inkdiff(dir.path(), &["corpus", "build", "--config", "nope.toml"]);
    assert!(!out.status.success());
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn corpus_build_is_byte_identical_for_a_fixed_seed() {
    let dir = setup();
    let a = ok(&inkdiff(
        dir.path(),
        &[
            "corpus", "build", "--config", "run.toml", "--seed", "9", "--out", "a",
        ],
    ));
    assert_eq!(a["records"], 60);
    ok(&inkdiff(
        dir.path(),
        &[
            "corpus", "build", "--config", "run.toml", "--seed", "9", "--out", "b",
        ],
    ));
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "manifest.jsonl"), read("b", "manifest.jsonl"));
    let exp = |d: &str| {
        let mut v: serde_json::Value = serde_json::from_slice(&read(d, "experiment.json")).unwrap();
        // The recorded output location differs between the two runs.
        v["config"]["corpus"] = serde_json::Value::Null;
        v["config_hash"] = serde_json::Value::Null;
        v["content_hash"] = serde_json::Value::Null;
        v
    };
    assert_eq!(exp("a")["artifacts"], exp("b")["artifacts"]);
    assert_eq!(exp("a"), exp("b"));
}

#[test]
fn end_to_end_smoke() {
    let dir = setup();
    let d = dir.path();
    let cfg = ["--config", "run.toml"];
    let run = |args: &[&str]| {
        let mut all: Vec<&str> = args.to_vec();
        all.extend_from_slice(&cfg);
        ok(&inkdiff(d, &all))
    };
    run(&["corpus", "build", "--out", "corpus"]);
    run(&["recognizer", "train", "--out", "rec"]);
    run(&["recognizer", "train", "--heldout", "--out", "held"]);
    assert!(d.join("held/heldout.safetensors").exists());
    let eval = run(&["recognizer", "eval", "--split", "test"]);
    assert!(eval["cer"].as_f64().unwrap() >= 0.0);

    let diff = run(&["diffusion", "train", "--out", "diff"]);
    assert_eq!(diff["steps"], 2);
    assert!(d.join("diff/diffusion.safetensors").exists());
    assert!(d.join("diff/metrics.jsonl").exists());

    // Synthesis of a word outside the corpus vocabulary.
    let gen = run(&[
        "generate",
        "--mode",
        "synthesis",
        "--text",
        "xyz",
        "--count",
        "50",
        "--out",
        "gen",
    ]);
    assert_eq!(gen["count"], 50);
    assert_eq!(gen["presence"]["image"], false);
    assert!(d.join("gen/manifest.jsonl").exists());
    assert!(d.join("gen/contact_sheet.png").exists());

    let source = fs::read_dir(d.join("corpus/images"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let source = source.to_str().unwrap();
    let imitation = run(&[
        "generate",
        "--mode",
        "imitation",
        "--text",
        "ab",
        "--image",
        source,
        "--writer",
        "1",
        "--out",
        "imit",
    ]);
    assert_eq!(imitation["presence"]["style"], true);

    let mix = run(&["mix", "--out", "mix"]);
    assert_eq!(mix["records"], 4);

    let report = run(&[
        "metrics", "compare", "--real", "corpus", "--gen", "gen", "--split", "all",
    ]);
    assert!(report["rmse"].as_f64().unwrap() >= 0.0);

    let aug = run(&["experiment", "augment", "--out", "aug"]);
    assert!(aug["baseline"]["cer"].as_f64().is_some());
    assert!(aug["augmented"]["cer"].as_f64().is_some());

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("gen/experiment.json")).unwrap()).unwrap();
    let paths: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap())
        .collect();
    assert!(paths.contains(&"manifest.jsonl"));
    assert!(paths.contains(&"contact_sheet.png"));
}
