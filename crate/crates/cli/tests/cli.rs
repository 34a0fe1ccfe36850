use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

fn acf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acf")).current_dir(dir).args(args).output().expect("spawn acf")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = acf(dir, args);
    assert!(
        out.status.success(),
        "acf {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small end-to-end run; every output lands under `dir`.
fn pipeline(dir: &Path, seed: &str) {
    let s = ["--seed", seed];
    ok(dir, &[&["demo-data", "--out-dir", "demo", "--users", "200"][..], &s].concat());
    ok(dir, &[&["ingest", "--input", "demo/ratings.csv", "--out-dir", "data", "--test-users", "40"][..], &s].concat());
    ok(
        dir,
        &[&["train", "--data-dir", "data", "--out", "model.acf", "--types", "3", "--attitudes", "2", "--iters", "6"][..], &s]
            .concat(),
    );
    ok(dir, &[&["bounds", "--model", "model.acf", "--out", "model.bounds"][..], &s].concat());
    ok(
        dir,
        &[&["prototypes", "--model", "model.acf", "--data-dir", "data", "--out", "p40.proto", "--fraction", "0.4"][..], &s]
            .concat(),
    );
    ok(
        dir,
        &[
            &[
                "evaluate", "--model", "model.acf", "--data-dir", "data", "--out-dir", "out", "--bounds", "model.bounds",
                "--prototypes", "p40.proto", "--kappa", "1,2", "--runs", "2", "--svg",
            ][..],
            &s,
        ]
        .concat(),
    );
}

fn checksums(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let digest = Sha256::digest(fs::read(&p).unwrap());
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), hex::encode(digest));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn pipeline_outputs_are_byte_identical_across_reruns() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), "11");
    pipeline(b.path(), "11");
    let (ca, cb) = (checksums(a.path()), checksums(b.path()));
    for f in [
        "demo/ratings.csv",
        "demo/ground_truth.acf",
        "data/train.csv",
        "data/test.csv",
        "data/split.json",
        "model.acf",
        "model.acf.trace.json",
        "model.bounds",
        "p40.proto",
        "out/results.json",
        "out/summary.txt",
        "out/plot.csv",
        "out/pruning.csv",
        "out/prototype_plot.csv",
        "out/plot.svg",
    ] {
        assert!(ca.contains_key(f), "missing output {f}");
    }
    assert_eq!(ca, cb);

    let c = tempfile::tempdir().unwrap();
    pipeline(c.path(), "12");
    assert_ne!(ca["data/train.csv"], checksums(c.path())["data/train.csv"]);
}

#[test]
fn evaluate_without_a_model_exits_1() {
    let d = tempfile::tempdir().unwrap();
    let out = acf(d.path(), &["evaluate", "--model", "missing.acf", "--data-dir", "data", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model not found"));
    assert!(!d.path().join("out").exists());
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        &["--bogus"][..],
        &["train"][..],
        &["frobnicate"][..],
        &["evaluate", "--model", "m", "--data-dir", "d", "--out-dir", "o", "--kappa", "x"][..],
        &["prototypes", "--model", "m", "--data-dir", "d", "--out", "o", "--fraction", "0.2", "--beta", "1"][..],
    ] {
        assert_eq!(acf(d.path(), args).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(acf(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn flags_override_the_config_file_which_overrides_defaults() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("acf.toml"), "seed = 5\n[train]\nn_types = 7\nmax_iters = 3\n").unwrap();
    let base = ["train", "--data-dir", "d", "--out", "m", "--print-config"];
    let defaults: toml::Table = toml::from_str(&ok(d.path(), &base)).unwrap();
    assert_eq!(defaults["seed"].as_integer(), Some(0));
    assert_eq!(defaults["train"]["n_types"].as_integer(), Some(12));

    let file: toml::Table = toml::from_str(&ok(d.path(), &[&base[..], &["--config", "acf.toml"]].concat())).unwrap();
    assert_eq!(file["seed"].as_integer(), Some(5));
    assert_eq!(file["train"]["n_types"].as_integer(), Some(7));
    assert_eq!(file["train"]["max_iters"].as_integer(), Some(3));

    let flags: toml::Table = toml::from_str(&ok(
        d.path(),
        &[&base[..], &["--config", "acf.toml", "--seed", "9", "--types", "4"]].concat(),
    ))
    .unwrap();
    assert_eq!(flags["seed"].as_integer(), Some(9));
    assert_eq!(flags["train"]["n_types"].as_integer(), Some(4));
    assert_eq!(flags["train"]["max_iters"].as_integer(), Some(3));
}

#[test]
fn bad_config_files_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let out = acf(d.path(), &["--config", "nope.toml", "demo-data", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config file not found"));
    fs::write(d.path().join("bad.toml"), "[train]\nn_typez = 3\n").unwrap();
    assert_eq!(acf(d.path(), &["--config", "bad.toml", "demo-data", "--out-dir", "x"]).status.code(), Some(1));
}

#[test]
fn naive_bayes_models_train_and_evaluate() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["demo-data", "--out-dir", "demo", "--users", "150"]);
    ok(p, &["ingest", "--input", "demo/ratings.csv", "--out-dir", "data", "--test-users", "30"]);
    ok(p, &["train", "--data-dir", "data", "--out", "nb.acf", "--model-kind", "naive-bayes", "--components", "4"]);
    let out = acf(p, &["bounds", "--model", "nb.acf", "--out", "nb.bounds"]);
    assert_eq!(out.status.code(), Some(1));
    ok(p, &["evaluate", "--model", "nb.acf", "--data-dir", "data", "--out-dir", "out", "--kappa", "1,2", "--runs", "1"]);
    let results: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("out/results.json")).unwrap()).unwrap();
    assert_eq!(results["model_kind"], "naive_bayes");
    assert!(results["query"]["summary"].as_array().unwrap().len() == 6);
    assert!(results["pruning"].is_null());
}

#[test]
fn ingest_applies_the_density_filter() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let mut csv = String::from("user,item,rating\n");
    for u in 0..30 {
        for i in 0..5 {
            csv.push_str(&format!("u{u},i{i},{}\n", 1 + (u + i) % 6));
        }
    }
    // One sparse user and one sparse item.
    csv.push_str("lonely,i0,3\nu0,rare,4\n");
    fs::write(p.join("r.csv"), csv).unwrap();
    let out = ok(p, &["ingest", "--input", "r.csv", "--out-dir", "data", "--min-user", "3", "--min-item", "2", "--test-users", "5"]);
    assert!(out.contains("kept 30 users and 5 items"), "{out}");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("data/split.json")).unwrap()).unwrap();
    assert_eq!(manifest["test_user_labels"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["train_user_labels"].as_array().unwrap().len(), 25);
}

fn http(addr: &str, request: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn serve_answers_over_http() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["demo-data", "--out-dir", "demo", "--users", "120"]);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_acf"))
        .current_dir(p)
        .args(["serve", "--model", "demo/ground_truth.acf", "--addr", &addr, "--store", "s.jsonl"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    while TcpStream::connect(&addr).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    let health = http(&addr, "GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    let created = http(&addr, "POST /sessions HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"n_items\":50"));
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");
    assert!(fs::read_to_string(p.join("s.jsonl")).unwrap().contains("\"op\":\"create\""));
}
