use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nvgap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvgap"))
        .args(args)
        .output()
        .expect("spawn nvgap")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A short three-frame container in `dir`.
fn synth(dir: &TempDir, name: &str, preset: &str, extra: &[&str]) -> PathBuf {
    let out = dir.path().join(name);
    let mut args = vec!["synth", "-o", p(&out), "--preset", preset, "--gop", "IPP", "--main-len", "3000"];
    args.extend_from_slice(extra);
    let o = nvgap(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn line_value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no {key:?} line in {text}"))
        .trim()
}

#[test]
fn encode_then_decode_is_identical() {
    let dir = TempDir::new().unwrap();
    let nvl = synth(&dir, "a.nvl", "drifted-sigma", &[]);
    let nvb = dir.path().join("a.nvb");
    let o = nvgap(&["encode", "-i", p(&nvl), "-o", p(&nvb), "-k", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let baseline: usize = line_value(&text, "baseline bits:").parse().unwrap();
    let achieved: usize = line_value(&text, "achieved bits:").parse().unwrap();
    assert!(achieved < baseline, "{text}");
    assert!(line_value(&text, "saving:").ends_with('%'));

    let back = dir.path().join("back.nvl");
    let o = nvgap(&["decode", "-i", p(&nvb), "-m", p(&nvl), "-o", p(&back)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("identical"));
    assert_eq!(std::fs::read(&back).unwrap(), std::fs::read(&nvl).unwrap());
}

#[test]
fn zero_slots_report_zero_saving() {
    let dir = TempDir::new().unwrap();
    let nvl = synth(&dir, "a.nvl", "drifted-sigma", &[]);
    let nvb = dir.path().join("a.nvb");
    let o = nvgap(&["encode", "-i", p(&nvl), "-o", p(&nvb), "--top-s-factorized", "0", "--top-s-hyper", "0"]);
    let text = stdout(&o);
    assert_eq!(line_value(&text, "baseline bits:"), line_value(&text, "achieved bits:"));
    assert_eq!(line_value(&text, "parameter bits:"), "0");
    assert_eq!(line_value(&text, "saving:"), "0.0%");
}

#[test]
fn outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = synth(&dir, "a.nvl", "drifted-sigma", &["--seed", "3"]);
    let b = synth(&dir, "b.nvl", "drifted-sigma", &["--seed", "3"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = synth(&dir, "c.nvl", "drifted-sigma", &["--seed", "4"]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let (x, y) = (dir.path().join("x.nvb"), dir.path().join("y.nvb"));
    assert!(nvgap(&["encode", "-i", p(&a), "-o", p(&x)]).status.success());
    assert!(nvgap(&["encode", "-i", p(&b), "-o", p(&y)]).status.success());
    assert_eq!(std::fs::read(&x).unwrap(), std::fs::read(&y).unwrap());
}

#[test]
fn analyze_prints_table_and_csv() {
    let dir = TempDir::new().unwrap();
    let nvl = synth(&dir, "a.nvl", "drifted-sigma", &[]);
    let csv = dir.path().join("t.csv");
    let o = nvgap(&["analyze", "-i", p(&nvl), "--csv", p(&csv)]);
    assert!(o.status.success());
    let table = stdout(&o);
    for label in ["I ", "P ", "Video"] {
        assert!(table.lines().any(|l| l.starts_with(label)), "{table}");
    }
    let csv = std::fs::read_to_string(csv).unwrap();
    assert!(csv.starts_with("scope,label,component,ratio_pct,gap_pct,saving_pct"));
    assert!(csv.lines().any(|l| l.starts_with("summary,Video,residual-main,")));
    assert!(csv.lines().any(|l| l.starts_with("frame,2:P,motion-side,")));
}

#[test]
fn verify_prints_a_passing_verdict() {
    let dir = TempDir::new().unwrap();
    let nvl = synth(&dir, "a.nvl", "matched", &[]);
    let o = nvgap(&["verify", "-i", p(&nvl)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["verdict"], "pass");
    assert_eq!(v["gibbs_violations"], 0);
    assert_eq!(v["overhead_violations"], 0);
    assert_eq!(v["round_trip"], true);
    assert_eq!(v["streams_checked"], 2 + 4 + 4);
}

#[test]
fn malformed_inputs_exit_with_status_2() {
    let dir = TempDir::new().unwrap();
    let nvl = synth(&dir, "a.nvl", "drifted-sigma", &[]);
    let nvb = dir.path().join("a.nvb");
    assert!(nvgap(&["encode", "-i", p(&nvl), "-o", p(&nvb)]).status.success());

    let bytes = std::fs::read(&nvb).unwrap();
    let cut = dir.path().join("cut.nvb");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let o = nvgap(&["decode", "-i", p(&cut), "-m", p(&nvl)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let nvl_bytes = std::fs::read(&nvl).unwrap();
    let bad = dir.path().join("bad.nvl");
    std::fs::write(&bad, &nvl_bytes[..nvl_bytes.len() - 1]).unwrap();
    assert_eq!(nvgap(&["analyze", "-i", p(&bad)]).status.code(), Some(2));
    assert_eq!(nvgap(&["verify", "-i", p(&nvb)]).status.code(), Some(2));

    let o = nvgap(&["decode", "-i", p(&nvb), "-m", p(&nvl), "-k", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn decoding_against_other_models_fails() {
    let dir = TempDir::new().unwrap();
    let nvl = synth(&dir, "a.nvl", "drifted-sigma", &[]);
    let other = synth(&dir, "b.nvl", "drifted-sigma", &["--seed", "9"]);
    let nvb = dir.path().join("a.nvb");
    assert!(nvgap(&["encode", "-i", p(&nvl), "-o", p(&nvb)]).status.success());
    let code = nvgap(&["decode", "-i", p(&nvb), "-m", p(&other)]).status.code();
    assert!(matches!(code, Some(2 | 3)), "{code:?}");
}

#[test]
fn bad_arguments_exit_with_status_1() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.nvl");
    assert_eq!(nvgap(&["synth", "-o", p(&out), "--preset", "nope"]).status.code(), Some(1));
    let nvl = synth(&dir, "a.nvl", "drifted-sigma", &[]);
    let nvb = dir.path().join("a.nvb");
    assert_eq!(nvgap(&["encode", "-i", p(&nvl), "-o", p(&nvb), "-k", "0"]).status.code(), Some(1));
}
