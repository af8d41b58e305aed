use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_murmurscope"))
        .current_dir(dir)
        .env_remove("MURMURSCOPE_CONFIG")
        .args(args)
        .output()
        .expect("spawn murmurscope")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn corpus(dir: &Path, per_class: &str) {
    ok(dir, &["--out-dir", "corpus", "--seed", "11", "synth", "--per-class", per_class, "--snr", "25"]);
}

#[test]
fn synth_writes_manifest_and_pairs() {
    let t = tempfile::tempdir().unwrap();
    corpus(t.path(), "2");
    let c = t.path().join("corpus");
    let wavs = std::fs::read_dir(&c)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav"))
        .count();
    assert_eq!(wavs, 10);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(c.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.to_string().contains("mvp_001"));
}

#[test]
fn analyze_writes_report_and_explanations() {
    let t = tempfile::tempdir().unwrap();
    corpus(t.path(), "1");
    let stdout = ok(
        t.path(),
        &["--out-dir", "out", "analyze", "corpus/as_000.wav", "--explain", "contrastive,counterfactual:MS"],
    );
    assert!(stdout.contains("as_000_w0\tAS\tsystolic"), "{stdout}");
    let out = t.path().join("out");
    for f in ["as_000_w0.json", "as_000_w0.svg", "as_000_w0.contrastive.svg", "as_000_w0.counterfactual_MS.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("as_000_w0.json")).unwrap()).unwrap();
    assert_eq!(report["resolved"], "AS");

    // Re-rendering the stored report reproduces the written diagram.
    ok(t.path(), &["--out-dir", "again", "render", "out/as_000_w0.json", "--kind", "contrastive"]);
    assert_eq!(
        std::fs::read(out.join("as_000_w0.contrastive.svg")).unwrap(),
        std::fs::read(t.path().join("again/as_000_w0.contrastive.svg")).unwrap()
    );
}

#[test]
fn analyze_with_external_mask() {
    let t = tempfile::tempdir().unwrap();
    corpus(t.path(), "1");
    // Whole systole of the synthetic MR case, on the 100 Hz grid.
    let mask = t.path().join("mask.json");
    let mut bits = vec![0u8; 100];
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.path().join("corpus/mr_000.json")).unwrap()).unwrap();
    let tau = truth["params"]["tau"].as_array().unwrap();
    let (a, b) = (tau[0].as_f64().unwrap(), tau[1].as_f64().unwrap());
    for (k, bit) in bits.iter_mut().enumerate() {
        let tk = k as f64 / 100.0;
        *bit = (a - 1e-9 <= tk && tk < b - 1e-9) as u8;
    }
    std::fs::write(&mask, serde_json::to_string(&bits).unwrap()).unwrap();
    let stdout = ok(t.path(), &["--out-dir", "out", "analyze", "corpus/mr_000.wav", "--mask", "mask.json"]);
    assert!(stdout.contains("\tMR\t"), "{stdout}");
}

#[test]
fn evaluate_is_deterministic_across_workers() {
    let t = tempfile::tempdir().unwrap();
    corpus(t.path(), "2");
    let a = ok(t.path(), &["--out-dir", "a", "--workers", "1", "evaluate", "corpus"]);
    let b = ok(t.path(), &["--out-dir", "b", "--workers", "3", "evaluate", "corpus"]);
    assert!(a.contains("cases=10"), "{a}");
    assert_eq!(a.split(" -> ").next(), b.split(" -> ").next());
    for f in ["metrics.csv", "confusion.csv", "cases.csv"] {
        let x = std::fs::read(t.path().join("a").join(f)).unwrap();
        let y = std::fs::read(t.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn store_then_retrieve() {
    let t = tempfile::tempdir().unwrap();
    corpus(t.path(), "3");
    for i in 0..3 {
        ok(t.path(), &["--out-dir", "out", "analyze", &format!("corpus/as_00{i}.wav")]);
    }
    ok(
        t.path(),
        &["store", "--store", "cases.jsonl", "--svg", "out/as_000_w0.json", "out/as_001_w0.json", "out/as_002_w0.json"],
    );
    let got: serde_json::Value =
        serde_json::from_str(&ok(t.path(), &["retrieve", "--store", "cases.jsonl", "--diagnosis", "AS", "--k", "2"]))
            .unwrap();
    let recs = got["records"].as_array().unwrap();
    assert_eq!(recs.len(), 2);
    let d: Vec<f64> = recs.iter().map(|r| r["lack_of_fit"].as_f64().unwrap()).collect();
    assert!(d[0] <= d[1]);
    assert!(t.path().join("cases.jsonl.svg").is_dir());

    // A case explanation draws on the same store.
    ok(
        t.path(),
        &["--out-dir", "out2", "analyze", "corpus/as_000.wav", "--explain", "case:2", "--store", "cases.jsonl"],
    );
    let r = std::fs::read_to_string(t.path().join("out2/as_000_w0.json")).unwrap();
    assert!(r.contains("\"kind\":\"case\"") || r.contains("\"kind\": \"case\""), "{r}");
}

#[test]
fn config_from_environment_and_overrides() {
    let t = tempfile::tempdir().unwrap();
    corpus(t.path(), "1");
    std::fs::write(t.path().join("bad.toml"), "[signal]\nnope = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_murmurscope"))
        .current_dir(t.path())
        .env("MURMURSCOPE_CONFIG", "bad.toml")
        .args(["analyze", "corpus/as_000.wav"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    let out = run(t.path(), &["--set", "render.width_px=5", "analyze", "corpus/as_000.wav"]);
    assert!(!out.status.success());
    ok(t.path(), &["--out-dir", "o", "--set", "render.width_px=640", "analyze", "corpus/as_000.wav"]);
    let svg = std::fs::read_to_string(t.path().join("o/as_000_w0.svg")).unwrap();
    assert!(svg.contains("width=\"640\""));
}

#[test]
fn input_errors_exit_with_code_two() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run(t.path(), &["analyze", "missing.wav"]).status.code(), Some(2));
    std::fs::write(t.path().join("junk.wav"), b"not a wav at all").unwrap();
    assert_eq!(run(t.path(), &["analyze", "junk.wav"]).status.code(), Some(2));
    assert_eq!(run(t.path(), &["evaluate", "."]).status.code(), Some(2));
    assert_eq!(run(t.path(), &["frobnicate"]).status.code(), Some(2));
    let out = run(t.path(), &["render", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
