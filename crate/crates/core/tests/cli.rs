//! The `memlab` binary: exit codes, determinism, output locations.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use memlab::bridge::EchoModel;
use memlab::experiments::{read_string_file, Manifest};
use memlab::probes::{probe_sweep, ProbeReport, ProbeSpec};

const MEMLAB: &str = env!("CARGO_BIN_EXE_memlab");
const ECHO: &str = env!("CARGO_BIN_EXE_memlab-echo-bridge");

fn memlab(args: &[&str]) -> Output {
    Command::new(MEMLAB).args(args).env_remove("MEMLAB_OUT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("killed by signal")
}

fn write_manifest(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(format!("{name}.toml"));
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path to contents for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn runs_are_byte_identical_and_stamped() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), "det", &tiny_manifest("det", 12, ""));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = memlab(&["train", "--manifest", s(&m), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{} differs between runs", k.display());
    }

    let hash = std::fs::read_to_string(a.join("det/manifest.sha256")).unwrap();
    let parsed = Manifest::load(&a.join("det/manifest.toml")).unwrap();
    assert_eq!(hash.trim(), parsed.hash().unwrap());
    for f in ["report.json", "a/metrics.json", "a/string.json"] {
        let v: serde_json::Value = serde_json::from_slice(&ta[Path::new("det").join(f).as_path()]).unwrap();
        assert_eq!(v["manifest_hash"], hash.trim(), "{f}");
    }
    let svg = String::from_utf8(ta[Path::new("det/a/accuracy.svg")].clone()).unwrap();
    assert!(svg.contains(hash.trim()));
    for f in ["summary.csv", "trace.jsonl", "in_context.csv", "probes_0.csv", "final.ckpt"] {
        assert!(ta.contains_key(&Path::new("det/b").join(f)), "missing {f}");
    }
}

#[test]
fn seed_flag_changes_model_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), "seeded", &tiny_manifest("seeded", 3, ""));
    let run = |seed: &str, out: &str| {
        let o = memlab(&["train", "--manifest", s(&m), "--seed", seed, "--out", s(&dir.path().join(out))]);
        assert_eq!(code(&o), 0);
        String::from_utf8(o.stdout).unwrap()
    };
    let a = run("5", "x");
    let b = run("6", "y");
    assert!(a.contains("global seed 5") && b.contains("global seed 6"));
    let sa = std::fs::read(dir.path().join("x/seeded/a/summary.csv")).unwrap();
    let sb = std::fs::read(dir.path().join("y/seeded/a/summary.csv")).unwrap();
    assert_ne!(sa, sb);
}

#[test]
fn invalid_manifests_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("missing", None),
        ("garbage", Some("this is = = not toml".to_string())),
        ("unknown_key", Some(format!("bogus = 1\n{}", tiny_manifest("u", 3, "")))),
        ("zero_epochs", Some(tiny_manifest("z", 0, ""))),
        ("bad_checkpoint", Some(tiny_manifest("c", 5, "").replace("checkpoint_epochs = [5]", "checkpoint_epochs = [99]"))),
    ];
    for (name, text) in cases {
        let p = match text {
            Some(t) => write_manifest(dir.path(), name, &t),
            None => dir.path().join("nope.toml"),
        };
        let o = memlab(&["train", "--manifest", s(&p), "--out", s(dir.path())]);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn numerical_failure_exits_3_and_marks_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = tiny_manifest("nf", 5, "").replace("initial_lr = 0.01", "initial_lr = 1e30");
    let m = write_manifest(dir.path(), "nf", &text);
    let o = memlab(&["train", "--manifest", s(&m), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("nf/FAILED").exists());
}

#[test]
fn unreachable_bridge_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), "br", &tiny_manifest("br", 3, ""));
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let ep = format!("tcp://127.0.0.1:{port}");
    let o = memlab(&["train", "--manifest", s(&m), "--out", s(dir.path()), "--bridge-endpoint", &ep]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let o = memlab(&["bridge", "--endpoint", &ep, "train", "--manifest", s(&m), "--out", s(dir.path())]);
    assert_eq!(code(&o), 4);
}

#[test]
fn env_var_sets_output_root_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), "env", &tiny_manifest("env", 2, ""));
    let env_root = dir.path().join("from_env");
    let o = Command::new(MEMLAB)
        .args(["generate", "--manifest", s(&m)])
        .env("MEMLAB_OUT", &env_root)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_root.join("env/a/string.json").exists());
    let flag_root = dir.path().join("from_flag");
    let o = Command::new(MEMLAB)
        .args(["generate", "--manifest", s(&m), "--out", s(&flag_root)])
        .env("MEMLAB_OUT", env_root.join("unused"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(flag_root.join("env/b/string.json").exists());
    assert!(!env_root.join("unused").exists());
}

#[test]
fn generate_then_probe_checkpoint_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), "chain", &tiny_manifest("chain", 8, ""));
    let out = dir.path().join("runs");
    assert_eq!(code(&memlab(&["train", "--manifest", s(&m), "--out", s(&out)])), 0);
    let run_dir = out.join("chain/a");

    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"prefix_lengths":[2,"full"],"policies":["random"],"gc_scales":[1.0],
           "samples_per_position":3,"positions":{"mode":"all"},"seed":0}"#,
    )
    .unwrap();
    let probe_out = dir.path().join("probe");
    let o = memlab(&[
        "probe",
        "--checkpoint",
        s(&run_dir.join("final.ckpt")),
        "--string",
        s(&run_dir.join("string.json")),
        "--spec",
        s(&spec),
        "--out",
        s(&probe_out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: ProbeReport = serde_json::from_slice(&std::fs::read(probe_out.join("probe.json")).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 2);
    let o = memlab(&["probe", "--string", s(&run_dir.join("string.json")), "--out", s(&probe_out)]);
    assert_eq!(code(&o), 2);

    let rep = dir.path().join("report");
    let o = memlab(&[
        "report",
        "--csv",
        s(&run_dir.join("summary.csv")),
        "--csv",
        s(&out.join("chain/b/summary.csv")),
        "--ell",
        "8",
        "--out",
        s(&rep),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(rep.join("accuracy.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.contains("series a, b"));
}

#[test]
fn probe_through_bridge_matches_in_process_echo() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), "pb", &tiny_manifest("pb", 2, ""));
    assert_eq!(code(&memlab(&["generate", "--manifest", s(&m), "--out", s(dir.path())])), 0);
    let string_file = dir.path().join("pb/a/string.json");
    let endpoint = format!("{ECHO} --vocab-size {VOCAB} --bos-token-id {BOS}");
    let out = dir.path().join("probe");
    let o = memlab(&[
        "bridge",
        "--endpoint",
        &endpoint,
        "probe",
        "--string",
        s(&string_file),
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let got: ProbeReport = serde_json::from_slice(&std::fs::read(out.join("probe.json")).unwrap()).unwrap();
    let spec = ProbeSpec {
        seed: 3,
        ..ProbeSpec::default()
    };
    let want = probe_sweep(&EchoModel::new(VOCAB, BOS, 4096), &read_string_file(&string_file).unwrap(), &spec).unwrap();
    assert_eq!(got, want);
}
