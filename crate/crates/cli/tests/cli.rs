use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qkge_core::checkpoint::ModelCheckpoint;
use qkge_core::Model;

fn qkge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkge")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = qkge(args);
    assert!(out.status.success(), "qkge {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// 24 entities in two families; `parent`, `sibling` and `likes` relations.
fn toy_dataset(dir: &Path) -> PathBuf {
    let path = dir.join("toy.tsv");
    let mut f = fs::File::create(&path).unwrap();
    for fam in 0..2 {
        let base = fam * 12;
        for i in 0..12 {
            for j in 0..12 {
                let (a, b) = (base + i, base + j);
                if i != j && (i + j) % 3 == 0 {
                    writeln!(f, "p{a}\tsibling\tp{b}").unwrap();
                }
                if j == (i + 1) % 12 {
                    writeln!(f, "p{a}\tparent\tp{b}").unwrap();
                }
                if i < j && (i * j) % 5 == 1 {
                    writeln!(f, "p{a}\tlikes\tp{b}").unwrap();
                }
            }
        }
    }
    path
}

struct Fixture {
    tmp: tempfile::TempDir,
    data: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let data = toy_dataset(tmp.path());
        Self { tmp, data }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.tmp.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).to_string_lossy().into_owned()
    }

    fn train(&self, out: &str, extra: &[&str]) -> String {
        let data = self.data.to_string_lossy().into_owned();
        let out = self.s(out);
        let mut args = vec!["train", "--dataset", &data, "--epochs", "4", "--eval-every", "2", "--out", &out];
        args.extend_from_slice(extra);
        ok(&args)
    }
}

#[test]
fn train_writes_all_artifacts() {
    let fx = Fixture::new();
    let table = fx.train("run", &["--model", "fqce", "--qubits", "3"]);
    assert!(table.contains("combined"));
    let log = fs::read_to_string(fx.path("run/train_log.csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], "epoch,loss,valid_hits3,wall_seconds");
    assert_eq!(rows.len(), 5);
    assert!(rows[2].split(',').nth(2).is_some_and(|v| !v.is_empty()));
    assert!(rows[1].split(',').nth(2).is_some_and(|v| v.is_empty()));
    let metrics = fs::read_to_string(fx.path("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("dataset,model,direction,mr,hits3,hits10"));
    assert_eq!(metrics.lines().count(), 4);
    assert!(fx.path("run/model.ckpt").is_file());
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let fx = Fixture::new();
    for run in ["a", "b"] {
        fx.train(run, &["--model", "qce", "--qubits", "3", "--dropout", "0.1", "--noise", "0.05", "--seed", "7"]);
    }
    fx.train("c", &["--model", "qce", "--qubits", "3", "--dropout", "0.1", "--noise", "0.05", "--seed", "8"]);
    let read = |p: &str| fs::read(fx.path(p)).unwrap();
    assert_eq!(read("a/model.ckpt"), read("b/model.ckpt"));
    assert_eq!(read("a/metrics.csv"), read("b/metrics.csv"));
    assert_ne!(read("a/model.ckpt"), read("c/model.ckpt"));
}

#[test]
fn regularized_training_for_both_circuit_models() {
    let fx = Fixture::new();
    for model in ["qce", "fqce"] {
        let out = format!("reg-{model}");
        fx.train(&out, &["--model", model, "--qubits", "3", "--noise", "0.02", "--dropout", "0.02", "--noise-at-eval"]);
        assert!(fx.path(&format!("{out}/metrics.csv")).is_file());
    }
}

#[test]
fn eval_histogram_and_shot_mode() {
    let fx = Fixture::new();
    fx.train("run", &["--model", "fqce", "--qubits", "3"]);
    let data = fx.data.to_string_lossy().into_owned();
    let ckpt = fx.s("run/model.ckpt");
    let out = fx.s("eval");
    ok(&["eval", "--dataset", &data, "--checkpoint", &ckpt, "--split", "valid", "--histogram", "8", "--out", &out]);
    let hist = fs::read_to_string(fx.path("eval/histogram.csv")).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert_eq!(lines[0], "bin_lo,bin_hi,count");
    assert_eq!(lines.len(), 9);
    assert!(lines[1].starts_with("-1,"));
    assert!(lines[8].split(',').nth(1) == Some("1"));

    let exact = fs::read(fx.path("eval/metrics.csv")).unwrap();
    let shots = fx.s("shots");
    ok(&["eval", "--dataset", &data, "--checkpoint", &ckpt, "--split", "valid", "--shots", "200", "--seed", "3", "--out", &shots]);
    let sampled = fs::read(fx.path("shots/metrics.csv")).unwrap();
    assert_ne!(exact, sampled);
    let again = fx.s("shots2");
    ok(&["eval", "--dataset", &data, "--checkpoint", &ckpt, "--split", "valid", "--shots", "200", "--seed", "3", "--out", &again]);
    assert_eq!(sampled, fs::read(fx.path("shots2/metrics.csv")).unwrap());
}

#[test]
fn infer_reports_every_entity() {
    let fx = Fixture::new();
    fx.train("run", &["--model", "qce", "--qubits", "3"]);
    let data = fx.data.to_string_lossy().into_owned();
    let ckpt = fx.s("run/model.ckpt");
    let out = fx.s("infer");
    let stdout = ok(&["infer", "--dataset", &data, "--checkpoint", &ckpt, "--subject", "p0", "--predicate", "parent", "--shots", "500", "--out", &out]);
    assert!(stdout.contains("Pr(A=0)"));
    let csv = fs::read_to_string(fx.path("infer/inference.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("index,entity,probability,post_amplification_probability,sample_frequency"));
    assert_eq!(csv.lines().count(), 25);
    let freq: f64 = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((freq - 1.0).abs() < 1e-9);

    let ideal = fx.s("ideal");
    let stdout = ok(&[
        "infer", "--dataset", &data, "--checkpoint", &ckpt, "--subject", "p0", "--predicate", "parent", "--idealistic", "--solutions", "p1",
        "--out", &ideal,
    ]);
    assert!(stdout.contains("post-selected success probability 1.000000"), "{stdout}");
}

#[test]
fn exported_embeddings_round_trip() {
    let fx = Fixture::new();
    let data = fx.data.to_string_lossy().into_owned();
    for model in ["qce", "fqce", "distmult"] {
        fx.train(model, &["--model", model, "--qubits", "3", "--rank", "8"]);
        let ckpt = fx.s(&format!("{model}/model.ckpt"));
        let csv_path = fx.s(&format!("{model}/emb.csv"));
        ok(&["export-embeddings", "--dataset", &data, "--checkpoint", &ckpt, "--out", &csv_path]);
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 24);
        let m = ModelCheckpoint::load(Path::new(&ckpt)).unwrap().model().unwrap();
        for line in text.lines() {
            let mut cols = line.split(',');
            let name = cols.next().unwrap();
            let vals: Vec<f64> = cols.map(|v| v.parse().unwrap()).collect();
            match (&m, model) {
                (Model::Quantum(q), "qce") => {
                    let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let st = q.entity_state(id_of(&fx, name)).unwrap();
                    for (a, v) in st.amplitudes().iter().zip(&vals) {
                        assert!((a.re - v / norm).abs() < 1e-10);
                    }
                }
                (Model::Quantum(q), _) => {
                    assert_eq!(vals.len(), 16);
                    let st = q.entity_state(id_of(&fx, name)).unwrap();
                    for (k, a) in st.amplitudes().iter().enumerate() {
                        assert_eq!((a.re, a.im), (vals[k], vals[k + 8]));
                    }
                }
                (Model::Classical(c), _) => assert_eq!(c.entity(id_of(&fx, name)), vals.as_slice()),
            }
        }
    }
}

/// Entity ids follow first appearance in the data file.
fn id_of(fx: &Fixture, name: &str) -> usize {
    let text = fs::read_to_string(&fx.data).unwrap();
    let mut order: Vec<String> = Vec::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        for n in [f[0], f[2]] {
            if !order.iter().any(|o| o == n) {
                order.push(n.to_string());
            }
        }
    }
    order.iter().position(|o| o == name).unwrap()
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    let data = fx.data.to_string_lossy().into_owned();
    assert_eq!(qkge(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(qkge(&["eval"]).status.code(), Some(2));
    let missing = fx.s("nope.ckpt");
    let out = qkge(&["eval", "--dataset", &data, "--checkpoint", &missing]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    assert_eq!(qkge(&["train", "--dataset", &data, "--model", "transe"]).status.code(), Some(1));
    assert_eq!(qkge(&["train", "--dataset", &data, "--rank", "32"]).status.code(), Some(1));
    let nodata = fx.s("missing-dir");
    assert_eq!(qkge(&["train", "--dataset", &nodata]).status.code(), Some(1));

    fx.train("dm", &["--model", "distmult", "--rank", "8"]);
    let ckpt = fx.s("dm/model.ckpt");
    let out = qkge(&["infer", "--dataset", &data, "--checkpoint", &ckpt, "--subject", "p0", "--predicate", "parent"]);
    assert_eq!(out.status.code(), Some(1));
    let out = qkge(&["eval", "--dataset", &data, "--checkpoint", &ckpt, "--shots", "10"]);
    assert_eq!(out.status.code(), Some(1));

    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let bad = fx.path("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let out = qkge(&["eval", "--dataset", &data, "--checkpoint", &bad.to_string_lossy()]);
    assert_eq!(out.status.code(), Some(1));
}
