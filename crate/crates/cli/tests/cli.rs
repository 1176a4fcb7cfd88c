use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use bmaguard_core::pngio::write_png;

fn bmaguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmaguard"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = bmaguard(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn hash_of_uniform_image_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("u.png");
    // Large 16:9 input fills the whole canvas; smaller or other shapes are
    // padded and hash to a border pattern.
    write_png(&img, 1920, 1080, &vec![90u8; 1920 * 1080 * 3]).unwrap();
    let out = bmaguard(&["hash", p(&img)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "0000000000000000\n");
}

#[test]
fn scan_whitelisted_domain() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("s.png");
    write_png(&img, 64, 64, &[200u8; 64 * 64 * 3]).unwrap();
    let wl = dir.path().join("top.csv");
    std::fs::write(&wl, "# rank,domain\n50,example.com\n").unwrap();
    let v = ok_json(&["scan", "--domain", "example.com", "--image", p(&img), "--whitelist", p(&wl)]);
    assert_eq!(v["source"], "whitelist");
    assert_eq!(v["decision_case"], 1);

    // Not whitelisted and no model: the cycle fails with a message.
    let out = bmaguard(&["scan", "--domain", "other.org", "--image", p(&img), "--whitelist", p(&wl), "--text", "hi"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no model"));
}

#[test]
fn usage_errors_exit_nonzero() {
    for args in [&["frobnicate"][..], &["hash"], &["split", "--axis", "sideways"], &["scan", "--domain", "x"]] {
        let out = bmaguard(args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn corpus_split_train_eval_attack() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let gen = |out: &Path| {
        ok_json(&[
            "gen-corpus", "--out", p(out), "--benign", "12", "--bma", "8", "--campaigns", "2", "--seed", "5",
            "--resolutions", "320x180,360x640", "--augment", "2",
        ])
    };
    let summary = gen(&corpus);
    assert_eq!(summary["counts"]["benign"], 12);
    assert_eq!(summary["counts"]["bma"], 16);
    assert_eq!(summary["seed"], 5);
    let manifest = corpus.join("manifest.jsonl");

    // Same seed, same bytes.
    let again = dir.path().join("again");
    gen(&again);
    assert_eq!(std::fs::read(&manifest).unwrap(), std::fs::read(again.join("manifest.jsonl")).unwrap());
    assert_eq!(
        std::fs::read(corpus.join("images/m000003.png")).unwrap(),
        std::fs::read(again.join("images/m000003.png")).unwrap()
    );

    let s = ok_json(&[
        "split", "--manifest", p(&manifest), "--axis", "campaign", "--held", "c2", "--benign-test", "4", "--prefix", "loo",
    ]);
    assert_eq!(s["counts"][1]["bma"], 8);
    assert_eq!(s["counts"][1]["benign"], 4);
    assert_eq!(s["counts"][0]["benign"], 8);
    let train = corpus.join("loo-train.jsonl");
    let test = corpus.join("loo-test.jsonl");
    assert!(test.exists() && corpus.join("loo-excluded.jsonl").exists());

    let ckpt = dir.path().join("model.ckpt");
    let out = bmaguard(&["train", "--manifest", p(&train), "--out", p(&ckpt), "--epochs", "1", "--batch-size", "8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line: Value = serde_json::from_slice(out.stdout.split(|&b| b == b'\n').next().unwrap()).unwrap();
    assert_eq!(line["epoch"], 0);
    assert!(ckpt.exists() && dir.path().join("model.ckpt.vocab").exists());

    let report = ok_json(&["eval", "--manifest", p(&test), "--model", p(&ckpt)]);
    for key in ["auroc", "dr_at_fp", "fp_target", "threshold", "confusion"] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(report["n_bma"], 8);

    let adv = dir.path().join("adv");
    let a = ok_json(&["attack", "--manifest", p(&test), "--model", p(&ckpt), "--out", p(&adv), "--tiers", "1,3"]);
    assert_eq!(a["pairs"], 24);
    assert!(a["max_linf_255"]["1"].as_f64().unwrap() <= 2.0);
    assert!(a["max_linf_255"]["3"].as_f64().unwrap() <= 8.0);
    // Attack output is itself a loadable manifest.
    let again = ok_json(&["eval", "--manifest", p(&adv.join("manifest.jsonl")), "--model", p(&ckpt)]);
    assert_eq!(again["n_bma"], 16);
}
