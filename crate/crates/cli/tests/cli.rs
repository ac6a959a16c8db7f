//! End-to-end tests of the `embstab` binary: the experiment driver contract
//! (all artifacts, deterministic reruns, consistent pair ids) and the
//! documented exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use embstab_testkit::{subsample_lines, SynthConfig, SynthCorpus};

fn embstab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_embstab"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn embstab");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut synth = SynthCorpus::new(
            SynthConfig {
                topics: 4,
                words_per_topic: 30,
                class_words: 20,
                ..SynthConfig::default()
            },
            99,
        );
        let corpus_a = synth.corpus(900);
        let corpus_b = subsample_lines(&corpus_a, 0.95, 5);
        fs::write(dir.path().join("corpus_a.txt"), corpus_a.join("\n")).unwrap();
        fs::write(dir.path().join("corpus_b.txt"), corpus_b.join("\n")).unwrap();
        let mut labeled = SynthCorpus::new(
            SynthConfig {
                topics: 4,
                words_per_topic: 30,
                class_words: 20,
                ..SynthConfig::default()
            },
            123,
        );
        fs::write(dir.path().join("train.tsv"), labeled.labeled_tsv(220).join("\n")).unwrap();
        fs::write(dir.path().join("test.tsv"), labeled.labeled_tsv(120).join("\n")).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_config(&self) -> PathBuf {
        let config = format!(
            "# toy experiment\n\
             corpus_a = {}\n\
             corpus_b = {}\n\
             train_data = {}\n\
             test_data = {}\n\
             task = sentiment\n\
             out_dir = {}\n\
             dims = 6,12\n\
             bits = 2,32\n\
             seeds = 0\n\
             top_k = 10000\n\
             window = 5\n\
             min_count = 2\n\
             mc_epochs = 8\n\
             mc_lr = 0.1\n\
             mc_batch = 64\n\
             mc_lr_decay_epochs = 4\n\
             mc_tol = 0.00001\n\
             alpha = 3\n\
             knn_k = 3\n\
             knn_q = 50\n\
             bow_epochs = 10\n\
             bow_lr = 0.01\n",
            self.path("corpus_a.txt").display(),
            self.path("corpus_b.txt").display(),
            self.path("train.tsv").display(),
            self.path("test.tsv").display(),
            self.path("runs").display(),
        );
        let path = self.path("experiment.cfg");
        fs::write(&path, config).unwrap();
        path
    }
}

fn read_sorted_dir(path: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(path)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn experiment_emits_all_artifacts_and_is_deterministic() {
    let ws = Workspace::new();
    let config = ws.write_config();

    let out = run_ok(embstab().arg("experiment").arg("--config").arg(&config));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let run_dir = PathBuf::from(
        stdout
            .lines()
            .find_map(|l| l.strip_prefix("run directory: "))
            .expect("driver prints the run directory"),
    );

    let names = read_sorted_dir(&run_dir);
    assert_eq!(
        names,
        vec![
            "correlations.csv",
            "instability.csv",
            "manifest.json",
            "measures.csv",
            "pairs.csv",
            "selection.csv",
            "trend.csv",
        ]
    );

    // Grid combinatorics: header + dims x bits rows per seed in pairs.csv.
    let pairs = fs::read_to_string(run_dir.join("pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 1 + 2 * 2);

    // Every pair_id in measures.csv appears in pairs.csv and instability.csv.
    let measures = fs::read_to_string(run_dir.join("measures.csv")).unwrap();
    let instability = fs::read_to_string(run_dir.join("instability.csv")).unwrap();
    let column = |text: &str| -> std::collections::BTreeSet<String> {
        text.lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect()
    };
    let measure_ids = column(&measures);
    assert_eq!(measure_ids, column(&pairs));
    assert_eq!(measure_ids, column(&instability));
    // Five measures per pair.
    assert_eq!(measures.lines().count(), 1 + 5 * 4);

    // Manifest carries the config hash and input hashes.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["grid_cells"], 4);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
    let hash = manifest["config_hash"].as_str().unwrap();
    assert!(run_dir.file_name().unwrap().to_string_lossy().starts_with(&hash[..12]));

    // Rerunning the same config reproduces every CSV byte for byte, and the
    // result is independent of the worker-thread count.
    let snapshot: Vec<(String, String)> = names
        .iter()
        .filter(|n| n.ends_with(".csv"))
        .map(|n| (n.clone(), fs::read_to_string(run_dir.join(n)).unwrap()))
        .collect();
    run_ok(embstab().arg("experiment").arg("--config").arg(&config));
    for (name, before) in &snapshot {
        let after = fs::read_to_string(run_dir.join(name)).unwrap();
        assert_eq!(before, &after, "{name} changed across reruns");
    }
    run_ok(
        embstab()
            .env("RAYON_NUM_THREADS", "1")
            .arg("experiment")
            .arg("--config")
            .arg(&config),
    );
    for (name, before) in &snapshot {
        let after = fs::read_to_string(run_dir.join(name)).unwrap();
        assert_eq!(before, &after, "{name} changed with a single worker thread");
    }
}

#[test]
fn stage_commands_compose_through_files() {
    let ws = Workspace::new();

    // train-mc on both corpora.
    for (corpus, out) in [("corpus_a.txt", "emb_a.txt"), ("corpus_b.txt", "emb_b.txt")] {
        run_ok(
            embstab()
                .args(["train-mc", "--dim", "8", "--window", "5", "--min-count", "2"])
                .args(["--epochs", "6", "--seed", "0"])
                .arg("--corpus")
                .arg(ws.path(corpus))
                .arg("--out")
                .arg(ws.path(out)),
        );
    }

    // info prints the shape.
    let info = run_ok(embstab().arg("info").arg(ws.path("emb_a.txt")));
    let text = String::from_utf8_lossy(&info.stdout);
    assert!(text.contains("dimension: 8"), "{text}");

    // align b onto a, writing both sides of the harmonized pair, then
    // quantize the pair with a shared threshold.
    run_ok(
        embstab()
            .arg("align")
            .arg("--ref")
            .arg(ws.path("emb_a.txt"))
            .arg("--src")
            .arg(ws.path("emb_b.txt"))
            .arg("--out")
            .arg(ws.path("emb_b_aligned.txt"))
            .arg("--ref-out")
            .arg(ws.path("emb_a_shared.txt")),
    );
    run_ok(
        embstab()
            .args(["quantize", "--bits", "4"])
            .arg("--input")
            .arg(ws.path("emb_a_shared.txt"))
            .arg("--out")
            .arg(ws.path("emb_a_q.txt")),
    );
    run_ok(
        embstab()
            .args(["quantize", "--bits", "4"])
            .arg("--input")
            .arg(ws.path("emb_b_aligned.txt"))
            .arg("--pair-ref")
            .arg(ws.path("emb_a_shared.txt"))
            .arg("--out")
            .arg(ws.path("emb_b_q.txt")),
    );

    // measure the quantized pair against full-precision anchors.
    let anchors = format!(
        "{},{}",
        ws.path("emb_a_shared.txt").display(),
        ws.path("emb_b_aligned.txt").display()
    );
    let measure = run_ok(
        embstab()
            .arg("measure")
            .arg("--a")
            .arg(ws.path("emb_a_q.txt"))
            .arg("--b")
            .arg(ws.path("emb_b_q.txt"))
            .args(["--anchors", &anchors, "--knn-k", "3", "--knn-q", "40"])
            .args(["--pair-id", "mc-d8-b4-s0"])
            .arg("--out")
            .arg(ws.path("measures.csv")),
    );
    let text = String::from_utf8_lossy(&measure.stdout);
    assert!(text.contains("eis:"), "{text}");

    // train bag-of-words models on each side and score the disagreement.
    for (emb, out) in [("emb_a_q.txt", "model_a.json"), ("emb_b_q.txt", "model_b.json")] {
        run_ok(
            embstab()
                .arg("train-bow")
                .arg("--emb")
                .arg(ws.path(emb))
                .arg("--data")
                .arg(ws.path("train.tsv"))
                .args(["--epochs", "10", "--lr", "0.01", "--seed", "0"])
                .arg("--out")
                .arg(ws.path(out)),
        );
    }
    let disagree = run_ok(
        embstab()
            .arg("disagree")
            .arg("--model-a")
            .arg(ws.path("model_a.json"))
            .arg("--model-b")
            .arg(ws.path("model_b.json"))
            .arg("--emb-a")
            .arg(ws.path("emb_a_q.txt"))
            .arg("--emb-b")
            .arg(ws.path("emb_b_q.txt"))
            .arg("--test")
            .arg(ws.path("test.tsv"))
            .args(["--pair-id", "mc-d8-b4-s0", "--task", "sentiment"])
            .arg("--out")
            .arg(ws.path("instability.csv")),
    );
    assert!(String::from_utf8_lossy(&disagree.stdout).contains("disagreement:"));

    let inst = fs::read_to_string(ws.path("instability.csv")).unwrap();
    assert!(inst.starts_with("pair_id,task,disagreement_pct,acc_a,acc_b\n"));
}

#[test]
fn convert_round_trips_and_truncates() {
    let ws = Workspace::new();
    fs::write(ws.path("emb.txt"), "3 2\nalpha 1 2\nbeta 3 4\ngamma 5 6\n").unwrap();
    run_ok(
        embstab()
            .arg("convert")
            .arg("--input")
            .arg(ws.path("emb.txt"))
            .arg("--output")
            .arg(ws.path("emb2.txt"))
            .args(["--top-k", "2"]),
    );
    let text = fs::read_to_string(ws.path("emb2.txt")).unwrap();
    assert_eq!(text, "2 2\nalpha 1 2\nbeta 3 4\n");
}

#[test]
fn verify_prop1_reports_pass() {
    let out = run_ok(embstab().args([
        "verify-prop1",
        "--n",
        "40",
        "--d",
        "6",
        "--k",
        "5",
        "--samples",
        "20000",
        "--seed",
        "3",
    ]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("identity: PASS"), "{text}");
    assert!(text.contains("monte carlo within 3 SE: PASS"), "{text}");
}

#[test]
fn exit_codes_follow_the_contract() {
    // Usage error.
    let out = embstab().arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Data error: missing file.
    let out = embstab().arg("info").arg("/no/such/file.txt").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Numerical failure: quantizing an all-zero matrix has no clip threshold.
    let dir = tempfile::tempdir().unwrap();
    let zeros = dir.path().join("zeros.txt");
    fs::write(&zeros, "2 2\na 0 0\nb 0 0\n").unwrap();
    let out = embstab()
        .args(["quantize", "--bits", "4"])
        .arg("--input")
        .arg(&zeros)
        .arg("--out")
        .arg(dir.path().join("q.txt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // Success.
    let out = embstab().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
