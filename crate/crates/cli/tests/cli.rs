use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cloakvit_core::imageio::{read_png, write_png};
use cloakvit_core::Image;
use tempfile::TempDir;

fn cloakvit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloakvit"))
        .current_dir(dir)
        .env_remove("CLOAKVIT_KEY")
        .args(args)
        .output()
        .expect("spawn cloakvit")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cloakvit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Key, toy model, transformed model and a 64x64 test image.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(64, 64, 3, |y, x, c| ((y * 8 + x * 3 + c * 85 + (x * y) % 7) % 256) as u8).unwrap();
        write_png(dir.path().join("img.png"), &img).unwrap();
        let ws = Workspace { dir };
        ok(ws.path(), &["keygen", "--seed", "7", "-o", "key.hex"]);
        ok(ws.path(), &["init-model", "--seed", "3", "plain.vtw"]);
        ok(ws.path(), &["transform-model", "--key", "key.hex", "plain.vtw", "enc.vtw"]);
        ws
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn keygen_seed_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &["keygen", "--seed", "42"]);
    let b = ok(dir.path(), &["keygen", "--seed", "42"]);
    assert_eq!(a, b);
    assert_eq!(a.trim().len(), 64);
    let r1 = ok(dir.path(), &["keygen"]);
    let r2 = ok(dir.path(), &["keygen"]);
    assert_ne!(r1, r2);
}

#[test]
fn encrypt_decrypt_round_trip() {
    let ws = Workspace::new();
    for scheme in ["vit", "pixel-based"] {
        ok(ws.path(), &["encrypt", "--key", "key.hex", "--scheme", scheme, "img.png", "e.png"]);
        ok(ws.path(), &["decrypt", "--key", "key.hex", "--scheme", scheme, "e.png", "d.png"]);
        let original = read_png(ws.file("img.png")).unwrap();
        assert_ne!(read_png(ws.file("e.png")).unwrap(), original, "{scheme}");
        assert_eq!(read_png(ws.file("d.png")).unwrap(), original, "{scheme}");
        assert_eq!(std::fs::read(ws.file("d.png")).unwrap(), std::fs::read(ws.file("img.png")).unwrap());
    }
}

#[test]
fn encrypted_inference_matches_plain() {
    let ws = Workspace::new();
    ok(ws.path(), &["encrypt", "--key", "key.hex", "img.png", "e.png"]);
    let plain = ok(ws.path(), &["infer", "--model", "plain.vtw", "--image", "img.png", "--json"]);
    let enc = ok(ws.path(), &["infer", "--model", "enc.vtw", "--image", "e.png", "--json"]);
    assert_eq!(plain, enc);
    let v: serde_json::Value = serde_json::from_str(&plain).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["logits"].as_array().unwrap().len(), 4);
}

#[test]
fn infer_with_labels() {
    let ws = Workspace::new();
    std::fs::write(ws.file("labels.txt"), "a\nb\nc\nd\n").unwrap();
    let out = ok(ws.path(), &["infer", "--model", "plain.vtw", "--image", "img.png", "--labels", "labels.txt"]);
    assert!(out.starts_with("class: "), "{out}");
    assert!(out.contains('('), "{out}");

    std::fs::write(ws.file("short.txt"), "a\nb\n").unwrap();
    let out = cloakvit(ws.path(), &["infer", "--model", "plain.vtw", "--image", "img.png", "--labels", "short.txt"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_equivalence_passes() {
    let ws = Workspace::new();
    let out = ok(
        ws.path(),
        &["verify-equivalence", "--key", "key.hex", "--model", "plain.vtw", "--image", "img.png", "--trials", "3", "--json"],
    );
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["argmax_agreement"], 3);

    let out = cloakvit(ws.path(), &["verify-equivalence", "--key", "key.hex", "--model", "enc.vtw", "--image", "img.png"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn verify_equivalence_rejects_mismatched_block_size() {
    let ws = Workspace::new();
    ok(ws.path(), &["init-model", "--preset", "vit-s16", "--classes", "2", "big.vtw"]);
    let out = cloakvit(ws.path(), &["verify-equivalence", "--key", "key.hex", "--model", "big.vtw", "--image", "img.png"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn keyspace_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["keyspace"]);
    assert!(out.contains("total bits = 7474.228413"), "{out}");
    let out = ok(dir.path(), &["keyspace", "--json", "--mode", "per-channel"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["shuffle_len"], 256);
    assert_eq!(v["blocks"], 196);
    let out = cloakvit(dir.path(), &["keyspace", "--block-size", "15"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn key_from_environment() {
    let ws = Workspace::new();
    let hex = std::fs::read_to_string(ws.file("key.hex")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cloakvit"))
        .current_dir(ws.path())
        .env("CLOAKVIT_KEY", hex.trim())
        .args(["encrypt", "img.png", "env.png"])
        .output()
        .unwrap();
    assert!(out.status.success());
    ok(ws.path(), &["encrypt", "--key", "key.hex", "img.png", "file.png"]);
    assert_eq!(read_png(ws.file("env.png")).unwrap(), read_png(ws.file("file.png")).unwrap());
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    // Usage: unknown flag, missing key, bad key text.
    assert_eq!(code(&cloakvit(ws.path(), &["encrypt", "--bogus"])), 2);
    assert_eq!(code(&cloakvit(ws.path(), &["encrypt", "img.png", "x.png"])), 2);
    std::fs::write(ws.file("bad.hex"), "xyz").unwrap();
    assert_eq!(code(&cloakvit(ws.path(), &["encrypt", "--key", "bad.hex", "img.png", "x.png"])), 2);
    // I/O and format errors.
    assert_eq!(code(&cloakvit(ws.path(), &["infer", "--model", "missing.vtw", "--image", "img.png"])), 3);
    std::fs::write(ws.file("junk.vtw"), b"NOPE0000").unwrap();
    assert_eq!(code(&cloakvit(ws.path(), &["weights-info", "--model", "junk.vtw"])), 3);
    assert_eq!(code(&cloakvit(ws.path(), &["--help"])), 0);
}

#[test]
fn failed_command_leaves_no_output() {
    let ws = Workspace::new();
    std::fs::write(ws.file("broken.png"), b"not a png").unwrap();
    let out = cloakvit(ws.path(), &["encrypt", "--key", "key.hex", "broken.png", "out.png"]);
    assert_eq!(code(&out), 3);
    assert!(!ws.file("out.png").exists());

    let out = cloakvit(ws.path(), &["encrypt", "--key", "key.hex", "--block-size", "7", "img.png", "out.png"]);
    assert_eq!(code(&out), 2);
    assert!(!ws.file("out.png").exists());
    let leftovers: Vec<_> = std::fs::read_dir(ws.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn directory_mode() {
    let ws = Workspace::new();
    std::fs::create_dir(ws.file("in")).unwrap();
    for i in 0..3 {
        std::fs::copy(ws.file("img.png"), ws.file(&format!("in/{i}.png"))).unwrap();
    }
    std::fs::write(ws.file("in/readme.txt"), "ignored").unwrap();
    let out = ok(ws.path(), &["encrypt", "--key", "key.hex", "--dir", "in", "out"]);
    assert_eq!(out.lines().count(), 3);
    ok(ws.path(), &["decrypt", "--key", "key.hex", "--dir", "out", "back"]);
    let original = read_png(ws.file("img.png")).unwrap();
    for i in 0..3 {
        assert_eq!(read_png(ws.file(&format!("back/{i}.png"))).unwrap(), original);
    }
    assert!(!ws.file("out/readme.txt").exists());
}

#[test]
fn weights_info_reports_param_count() {
    let ws = Workspace::new();
    let out = ok(ws.path(), &["weights-info", "--model", "plain.vtw", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let total: u64 = v["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["shape"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).product::<u64>())
        .sum();
    assert_eq!(v["param_count"].as_u64().unwrap(), total);
}

#[test]
fn dataset_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let labeled = "img/0.jpg\tWOMEN/Dresses/id_1\n\
                   img/1.jpg\tMEN/Tees_Tanks/id_2\n\
                   img/2.jpg\tWOMEN/Blouses_Shirts/id_3\n\
                   img/3.jpg\tMEN/Jackets_Vests/id_4\n\
                   img/4.jpg\tWOMEN/Shorts/id_5\n\
                   img/5.jpg\tWOMEN/Cardigans/id_6\n";
    std::fs::write(d.join("labeled.tsv"), labeled).unwrap();

    let out = cloakvit(d, &["dataset", "remap", "--input", "labeled.tsv", "--output", "m.tsv"]);
    assert_eq!(code(&out), 2);
    assert!(!d.join("m.tsv").exists());

    ok(d, &["dataset", "remap", "--input", "labeled.tsv", "--output", "m.tsv", "--unmatched", "skip"]);
    let manifest = std::fs::read_to_string(d.join("m.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert!(manifest.contains("img/3.jpg\tMEN/Jackets_Vests/id_4\t3"));

    let out = ok(
        d,
        &["dataset", "split", "--input", "m.tsv", "--train-fraction", "0.6", "--seed", "1", "--train-out", "tr.tsv", "--test-out", "te.tsv"],
    );
    assert_eq!(out.trim(), "train 3\ttest 2");
    let tr = std::fs::read_to_string(d.join("tr.tsv")).unwrap();
    let te = std::fs::read_to_string(d.join("te.tsv")).unwrap();
    let mut all: Vec<&str> = tr.lines().chain(te.lines()).collect();
    all.sort();
    let mut expected: Vec<&str> = manifest.lines().collect();
    expected.sort();
    assert_eq!(all, expected);

    let out = ok(d, &["dataset", "summarize", "--input", "m.tsv", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["total"], 5);
    let counts: Vec<u64> = v["classes"].as_array().unwrap().iter().map(|c| c["count"].as_u64().unwrap()).collect();
    assert_eq!(counts, [1, 1, 1, 2]);

    let text = ok(d, &["dataset", "summarize", "--input", "m.tsv", "--clo-values", "0.3,0.2,0.25,0.5"]);
    assert!(text.contains("27013"), "{text}");
    for bad in ["0.3,0.2,-1,0.5", "0.3,0.2"] {
        let out = cloakvit(d, &["dataset", "summarize", "--input", "m.tsv", "--clo-values", bad]);
        assert_eq!(code(&out), 2, "{bad}");
    }
}
