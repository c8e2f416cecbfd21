use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use answervault::corpus::{DatasetSplit, InputFormat, QuestionRecord};
use answervault::siamese::{train, EncoderConfig, SiameseModel};
use answervault::synthetic::{generate, SyntheticSpec};
use serde_json::{json, Value};

const SMALL: [&str; 10] = [
    "--vocab-size", "300", "--embed-dim", "8", "--hidden-dim", "8", "--max-len", "32", "--batch-size", "8",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_answervault"));
    c.env_remove("ANSWERVAULT_CONFIG").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn sciq_json(records: &[QuestionRecord]) -> String {
    let values: Vec<Value> = records
        .iter()
        .map(|r| {
            let d: Vec<&String> = r.options.iter().enumerate().filter(|(i, _)| *i != r.correct_index).map(|(_, o)| o).collect();
            json!({
                "question": r.question,
                "distractor1": d[0],
                "distractor2": d[1],
                "distractor3": d[2],
                "correct_answer": r.correct_answer(),
                "support": r.support,
            })
        })
        .collect();
    serde_json::to_string(&values).unwrap()
}

/// A SciQ-layout directory of 40/10/10 generated records.
fn dataset(dir: &Path) -> PathBuf {
    let data = generate(&SyntheticSpec { records: 60, ..SyntheticSpec::default() });
    let root = dir.join("sciq");
    std::fs::create_dir_all(&root).unwrap();
    std::fs::write(root.join("train.json"), sciq_json(&data[..40])).unwrap();
    std::fs::write(root.join("valid.json"), sciq_json(&data[40..50])).unwrap();
    std::fs::write(root.join("test.json"), sciq_json(&data[50..])).unwrap();
    root
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = stdout(&run(&["ingest", "--data", s(&data)]));
    assert!(out.contains("train=40 validation=10 test=10 total=60"), "{out}");
}

#[test]
fn train_with_zero_epochs_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let mut args = vec!["train", "--data", s(&data), "--checkpoint", s(&ckpt), "--epochs", "0", "--seed", "5"];
    args.extend(SMALL);
    stdout(&run(&args));

    let split = DatasetSplit::load(&data, 13).unwrap();
    let config = EncoderConfig {
        vocab_size: 300,
        embed_dim: 8,
        hidden_dim: 8,
        max_len: 32,
        batch_size: 8,
        epochs: 0,
        seed: 5,
        ..EncoderConfig::default()
    };
    let expected = train(&config, &split.train, &[], InputFormat::OptionsOnly).unwrap().model;
    assert_eq!(SiameseModel::load(&ckpt).unwrap(), expected);
}

#[test]
fn train_eval_ablate_calibrate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let again = dir.path().join("again.ckpt");
    for path in [&ckpt, &again] {
        let mut args = vec!["train", "--data", s(&data), "--checkpoint", s(path), "--epochs", "2"];
        args.extend(SMALL);
        let out = stdout(&run(&args));
        assert!(out.contains("epoch   2"), "{out}");
    }
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&again).unwrap());

    let report = dir.path().join("eval.json");
    let out = stdout(&run(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--output", s(&report)]));
    assert!(out.starts_with("accuracy "), "{out}");
    assert!(out.contains("on 10 records"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["records"], 10);

    let out = stdout(&run(&["ablate", "--data", s(&data), "--checkpoint", s(&ckpt)]));
    for label in ["Options alone", "Options + question", "Answer sentence selection"] {
        assert_eq!(out.lines().filter(|l| l.starts_with(label)).count(), 1, "{out}");
    }
    assert_eq!(out, stdout(&run(&["ablate", "--data", s(&data), "--checkpoint", s(&ckpt)])));

    let threshold = dir.path().join("threshold.json");
    let out = stdout(&run(&["calibrate", "--data", s(&data), "--checkpoint", s(&ckpt), "--output", s(&threshold)]));
    assert!(out.starts_with("threshold "), "{out}");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&threshold).unwrap()).unwrap();
    assert!(v["threshold"].is_f64());
    assert_eq!(v["positives"], 10);
    assert_eq!(v["negatives"], 30);
}

#[test]
fn baseline_eval_from_embedding_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let table = answervault::synthetic::embedding_table(&SyntheticSpec::default(), 200);
    let words: Vec<String> = generate(&SyntheticSpec { records: 60, ..SyntheticSpec::default() })
        .iter()
        .flat_map(|r| {
            let mut t = vec![r.support.clone()];
            t.extend(r.options.iter().cloned());
            t
        })
        .flat_map(|t| answervault::corpus::normalize_text(&t).split(' ').map(String::from).collect::<Vec<_>>())
        .collect();
    let mut lines = String::new();
    let mut seen = std::collections::HashSet::new();
    for w in words {
        if let Some(v) = table.get(&w) {
            if seen.insert(w.clone()) {
                let nums: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                lines.push_str(&format!("{w} {}\n", nums.join(" ")));
            }
        }
    }
    let emb = dir.path().join("vectors.txt");
    std::fs::write(&emb, lines).unwrap();
    let out = stdout(&run(&["eval", "--data", s(&data), "--scorer", "baseline", "--embeddings", s(&emb)]));
    assert!(out.contains("accuracy 100.00% on 10 records"), "{out}");
}

#[test]
fn tune_writes_trial_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let log = dir.path().join("trials.jsonl");
    let best = dir.path().join("best.json");
    let out = stdout(&run(&[
        "tune", "--data", s(&data), "--trial-log", s(&log), "--output", s(&best),
        "--grid-lr", "0.5,0.05", "--grid-vocab-size", "200", "--grid-hidden-dim", "4,6", "--grid-embed-dim", "4",
        "--epochs", "1", "--max-len", "24", "--workers", "2",
    ]));
    assert!(out.contains("best trial"), "{out}");
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 4);
    for (i, line) in text.lines().enumerate() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["index"], i);
    }
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&best).unwrap()).unwrap();
    assert!(v["validation_accuracy"].is_f64());
}

#[test]
fn config_file_and_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "data = {:?}\ncheckpoint = {:?}\nepochs = 1\nvocab_size = 250\nembed_dim = 4\nhidden_dim = 4\nmax_len = 24\nloss = \"triplet\"\n",
            s(&data),
            s(&ckpt)
        ),
    )
    .unwrap();
    let out = bin().arg("train").env("ANSWERVAULT_CONFIG", &cfg).output().unwrap();
    stdout(&out);
    let model = SiameseModel::load(&ckpt).unwrap();
    assert_eq!(model.config().vocab_size, 250);
    assert_eq!(model.config().epochs, 1);

    let out = bin().args(["train", "--epochs", "0", "--vocab-size", "260"]).env("ANSWERVAULT_CONFIG", &cfg).output().unwrap();
    stdout(&out);
    let model = SiameseModel::load(&ckpt).unwrap();
    assert_eq!(model.config().vocab_size, 260);
    assert_eq!(model.config().epochs, 0);
    assert_eq!(model.config().embed_dim, 4);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "epochz = 3\n").unwrap();
    let out = run(&["ingest", "--config", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));

    let out = run(&["ingest", "--data", s(&dir.path().join("absent.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    assert!(!run(&["ingest", "--bogus-flag"]).status.success());
    assert!(!run(&["eval", "--format", "words"]).status.success());
    assert!(!run(&["eval"]).status.success());
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(addr).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    stream.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_answers_health() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let mut args = vec!["train", "--data", s(&data), "--checkpoint", s(&ckpt), "--epochs", "1"];
    args.extend(SMALL);
    stdout(&run(&args));

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = bin()
        .args(["serve", "--data", s(&data), "--checkpoint", s(&ckpt), "--listen", &addr])
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut response = None;
    while Instant::now() < deadline {
        if let Some(r) = http_get(&addr, "/health") {
            response = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let questions = http_get(&addr, "/questions?limit=2");
    child.kill().unwrap();
    child.wait().unwrap();
    let response = response.expect("service came up");
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"status\":\"ok\""));
    let questions = questions.unwrap();
    assert!(questions.contains("\"total\":10"), "{questions}");
}
