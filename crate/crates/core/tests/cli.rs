//! Runs the `molm` binary against the bundled molecule fixture.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/molecules.jsonl")
}

const TINY_MODEL: &str = "[model]
encoder_layers = 1
encoder_dim = 16
encoder_heads = 2
gaussian_kernels = 8
num_queries = 4
projector_blocks = 1
projector_dim = 16
projector_heads = 2
contrast_dim = 16
max_text_len = 192
lm_layers = 1
lm_dim = 16
lm_heads = 2
max_seq_len = 320
";

/// Writes a config into `dir` and returns its path.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "seed = 3\nout = {}\n\n[data]\nmolecules = {}\ninstructions = {}\n{extra}\n{TINY_MODEL}",
        dir.display(),
        fixture().display(),
        dir.join("instructions.jsonl").display(),
    );
    let p = dir.join("run.conf");
    std::fs::write(&p, text).unwrap();
    p
}

fn molm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molm")).args(args).env("MOLM_NUM_WORKERS", "1").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn build_counts_follow_the_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let o = molm(&["dataset", "build", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // Oracle from the raw JSON: one record per stored property, one per
    // description sentence (at most five) and one caption per description.
    let mut expect_computed = 0;
    let mut expect_descriptive = 0;
    let mut expect_caption = 0;
    for line in std::fs::read_to_string(fixture()).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        expect_computed += v["properties"].as_object().map_or(0, |m| m.len());
        if let Some(d) = v["description"].as_str() {
            expect_descriptive += d.matches(". ").count().min(4) + 1;
            expect_caption += 1;
        }
    }
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains(&format!("task computed_qa: {expect_computed}")), "{stdout}");
    assert!(stdout.contains(&format!("task descriptive_qa: {expect_descriptive}")), "{stdout}");
    assert!(stdout.contains(&format!("task caption: {expect_caption}")), "{stdout}");
    assert!(stdout.contains("property molecular_weight: 10"), "{stdout}");
    let lines = std::fs::read_to_string(dir.path().join("instructions.jsonl")).unwrap().lines().count();
    assert_eq!(lines, expect_computed + expect_descriptive + expect_caption);
    assert!(dir.path().join("dataset-build.resolved.conf").is_file());
}

#[test]
fn split_partitions_and_enrich_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "ratios = 0.6, 0.2, 0.2\n");
    assert_eq!(code(&molm(&["dataset", "build", "--config", s(&cfg)])), 0);
    assert_eq!(code(&molm(&["dataset", "split", "--config", s(&cfg)])), 0);
    let count = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap().lines().count();
    let m: usize = ["train", "valid", "test"].iter().map(|p| count(&format!("molecules.{p}.jsonl"))).sum();
    let i: usize = ["train", "valid", "test"].iter().map(|p| count(&format!("instructions.{p}.jsonl"))).sum();
    assert_eq!(m, 10);
    assert_eq!(i, count("instructions.jsonl"));

    assert_eq!(code(&molm(&["dataset", "enrich", "--config", s(&cfg)])), 0);
    let first = std::fs::read(dir.path().join("molecules.enriched.jsonl")).unwrap();
    assert_eq!(code(&molm(&["dataset", "enrich", "--config", s(&cfg)])), 0);
    assert_eq!(first, std::fs::read(dir.path().join("molecules.enriched.jsonl")).unwrap());
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    assert_eq!(code(&molm(&["train", "stage4"])), 2);
    assert_eq!(code(&molm(&["train", "stage1", "--prompt-mode", "text"])), 2);
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = molm(&["dataset", "build", "--config", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
    let o = Command::new(env!("CARGO_BIN_EXE_molm"))
        .args(["dataset", "build", "--config", s(&cfg)])
        .env("MOLM_NUM_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.jsonl");
    std::fs::write(&broken, "{\"id\": \"a\", \"smiles\": \"C\", \"colour\": \"red\"}\n").unwrap();
    let cfg = dir.path().join("broken.conf");
    std::fs::write(&cfg, format!("[data]\nmolecules = {}\n", broken.display())).unwrap();
    let o = molm(&["dataset", "build", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn staged_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[pretrain]\nlm_steps = 30\nencoder_steps = 30\n[train]\nmax_steps = 12\nwarmup_steps = 2\npeak_lr = 0.003\nbatch_size = 4\n[eval]\nbatch_size = 10\nk = 3\nmax_new = 24\n",
    );
    let c = s(&cfg);
    assert_eq!(code(&molm(&["dataset", "build", "--config", c])), 0);

    // Stage 2 and evaluation need an upstream checkpoint.
    let o = molm(&["train", "stage2", "--config", c]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no checkpoint"));
    assert_eq!(code(&molm(&["eval", "caption", "--config", c])), 4);

    for stage in ["stage1", "stage2"] {
        let o = molm(&["train", stage, "--config", c]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let d = dir.path().join(stage);
        for f in ["manifest.json", "config.json", "loss.csv", "resolved.conf", "encoder.bin", "lm.bin"] {
            assert!(d.join(f).is_file(), "{stage}/{f}");
        }
    }
    assert!(dir.path().join("stage1/pretrain_lm/loss.csv").is_file());

    for task in ["retrieval", "caption", "qa"] {
        let o = molm(&["eval", task, "--config", c]);
        assert_eq!(code(&o), 0, "{task}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["caption", "qa", "retrieval"]);
    assert_eq!(report["retrieval"]["k"], 3);
    assert!(report["qa"]["count"].as_u64().unwrap() > 0);

    let ckpt = dir.path().join("stage2");
    let o = molm(&["generate", s(&ckpt), s(&fixture()), "Describe the input molecule.", "--config", c, "--max-new", "0"]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());

    // A record without coordinates cannot feed the encoder.
    let bare = dir.path().join("bare.jsonl");
    std::fs::write(&bare, "{\"id\": \"x\", \"smiles\": \"CCO\"}\n").unwrap();
    let o = molm(&["generate", s(&ckpt), s(&bare), "Describe the input molecule.", "--config", c, "--prompt-mode", "mol_only"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("coordinates"), "{}", String::from_utf8_lossy(&o.stderr));
    let o = molm(&["generate", s(&ckpt), s(&bare), "Describe the input molecule.", "--config", c, "--prompt-mode", "smiles_only", "--max-new", "4"]);
    assert_eq!(code(&o), 0);

    // Generalist stage 3 over two datasets samples by the fourth root of their sizes.
    let ins = std::fs::read_to_string(dir.path().join("instructions.jsonl")).unwrap();
    let (qa, rest): (Vec<&str>, Vec<&str>) = ins.lines().partition(|l| l.contains("\"computed_qa\""));
    std::fs::write(dir.path().join("qa.jsonl"), qa.join("\n") + "\n").unwrap();
    std::fs::write(dir.path().join("text.jsonl"), rest.join("\n") + "\n").unwrap();
    let cfg3 = dir.path().join("stage3.conf");
    let base = std::fs::read_to_string(&cfg).unwrap();
    let datasets = format!("datasets = {}, {}\n", dir.path().join("qa.jsonl").display(), dir.path().join("text.jsonl").display());
    let text = base.replace("[data]\n", &format!("[data]\n{datasets}")).replace("max_steps = 12", "max_steps = 150").replace("batch_size = 4", "batch_size = 32");
    std::fs::write(&cfg3, text).unwrap();
    let o = molm(&["train", "stage3", "--config", s(&cfg3)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("stage3/sampling.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let sizes: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let z: f64 = sizes.iter().map(|n| n.powf(0.25)).sum();
    for (r, n) in rows.iter().zip(&sizes) {
        let expected = n.powf(0.25) / z;
        let empirical: f64 = r[4].parse().unwrap();
        assert!((empirical - expected).abs() < 0.02, "{r:?} vs {expected}");
    }
}
