use std::path::Path;
use std::process::{Command, Output};

fn dmltwin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmltwin"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let help = dmltwin(&["eye", "--help"], dir.path());
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("--data"));

    let bad = dmltwin(&["launch"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    let flag = dmltwin(&["eval", "--bogus"], dir.path());
    assert_eq!(flag.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&flag.stderr).contains("Usage"));

    let missing = dmltwin(&["eval", "--ckpt", "no.ckpt", "--data", "no.dtw"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&dmltwin(&["generate-data", "--rate", "0.98", "--seed", "3", "--out", "data.dtw"], d));
    let trained = ok(&dmltwin(
        &["train", "--model", "volterra", "--data", "data.dtw", "--epochs", "2", "--out", "v.ckpt"],
        d,
    ));
    assert!(trained.contains("best epoch"));
    assert!(d.join("v.ckpt.history.csv").exists());

    let v: f64 = ok(&dmltwin(&["eval", "--ckpt", "v.ckpt", "--data", "data.dtw"], d))
        .trim()
        .parse()
        .unwrap();
    assert!(v.is_finite() && v > 0.0);

    std::fs::write(
        d.join("eq.cfg"),
        r#"{"rate_fraction":0.98,"n_symbols":256,"seed":4,"learning_rate":0.003,"iterations":30}"#,
    )
    .unwrap();
    ok(&dmltwin(
        &["train-eq", "--channel", "v.ckpt", "--data", "data.dtw", "--config", "eq.cfg", "--out", "eq.json"],
        d,
    ));
    let cross = ok(&dmltwin(
        &["cross-eval", "--eq", "eq.json", "--channel", "ode", "--data", "data.dtw", "--config", "eq.cfg"],
        d,
    ));
    let row = cross.lines().nth(1).unwrap();
    assert!(row.starts_with("volterra,0.98,ode,"), "{row}");

    ok(&dmltwin(&["eye", "--data", "data.dtw", "--symbols", "256", "--out", "eye"], d));
    assert!(d.join("eye.png").exists() && d.join("eye.json").exists());

    ok(&dmltwin(
        &["report", "--data", "data.dtw", "--history", "v.ckpt.history.json", "--out", "t.csv"],
        d,
    ));
    let t = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(t.lines().any(|l| l.starts_with("ode,")));
    assert!(t.lines().any(|l| l.starts_with("volterra,")));

    ok(&dmltwin(
        &["sweep", "--rates", "0.98", "--models", "volterra", "--epochs", "1", "--out", "s.csv"],
        d,
    ));
    assert_eq!(std::fs::read_to_string(d.join("s.csv")).unwrap().lines().count(), 2);
}
