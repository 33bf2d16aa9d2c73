use std::fs;
use std::process::{Command, Output};

fn chimera(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chimera")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn identical_files_score_100() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("h.txt");
    fs::write(&f, "a b c d e\nf g\n").unwrap();
    let f = f.to_str().unwrap();
    let out = chimera(&["score", "--hyp", f, "--ref", f]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "100.0\n");
}

#[test]
fn json_score_reports_components() {
    let dir = tempfile::tempdir().unwrap();
    let (h, r) = (dir.path().join("h"), dir.path().join("r"));
    fs::write(&h, "the cat sat on\n").unwrap();
    fs::write(&r, "the cat sat on mat\n").unwrap();
    let out = chimera(&["score", "--json", "--hyp", h.to_str().unwrap(), "--ref", r.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["score"].as_f64().unwrap() - 77.88).abs() < 0.01, "{v}");
}

#[test]
fn missing_checkpoint_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("absent.chck");
    let out = chimera(&["translate", "--checkpoint", ck.to_str().unwrap(), "--data", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("absent.chck"), "{}", stderr(&out));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = chimera(&["score", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let out = chimera(&["--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap(), "gen-data"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("run.json"), "{}", stderr(&out));
}

#[test]
fn gen_data_is_seeded() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "5"), (&b, "5")] {
        let out = chimera(&["--seed", seed, "--out-dir", dir.path().to_str().unwrap(), "gen-data", "--samples", "8", "--mt-pairs", "4"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["vocab.txt", "train.tsv", "train.chfr", "dev.chfr", "test.tsv", "mt.tsv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let c = tempfile::tempdir().unwrap();
    chimera(&["--seed", "6", "--out-dir", c.path().to_str().unwrap(), "gen-data", "--samples", "8", "--mt-pairs", "4"]);
    assert_ne!(fs::read(a.path().join("train.chfr")).unwrap(), fs::read(c.path().join("train.chfr")).unwrap());
}
