use std::fs;
use std::process::Command;

fn drlfwd() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_drlfwd"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn eval_and_analyze_succeed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "output = \"out\"\nseeds = [1, 2]\n[[cell]]\npreset = \"rwp-3\"\nrange = 80.0\nduration = 1500\ncooldown = 700\npolicies = [\"utility\", \"random\"]\n",
    )
    .unwrap();
    let st = drlfwd().arg("eval").arg(dir.path().join("c.toml")).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(String::from_utf8_lossy(&st.stdout).contains("utility"));
    let out = dir.path().join("out");
    assert!(out.join("summary.csv").exists());
    let logs: Vec<_> = fs::read_dir(out.join("decisions")).unwrap().map(|e| e.unwrap().path()).collect();
    let st = drlfwd().arg("analyze").args(&logs).arg("-o").arg(dir.path().join("b.csv")).status().unwrap();
    assert!(st.success());
    assert!(dir.path().join("b.csv").exists());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seeds = [1]\nunknown_key = 3\n").unwrap();
    let out = drlfwd().arg("eval").arg(dir.path().join("bad.toml")).arg("-o").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml"), "{err}");

    let st = drlfwd().arg("eval").arg(dir.path().join("missing.toml")).status().unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    // The cool-down is far too short for the random policy to settle its packets.
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "seeds = [1]\ntesting = true\n[[cell]]\npreset = \"rwp-3\"\nrange = 10.0\nduration = 2000\ncooldown = 1\npolicies = [\"random\"]\n",
    )
    .unwrap();
    let st = drlfwd().arg("eval").arg(dir.path().join("c.toml")).arg("-o").arg(dir.path().join("o")).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn export_trace_writes_every_sample() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    let st = drlfwd()
        .args(["export-trace", "--preset", "rwp-mix2", "--range", "20", "--steps", "50", "-o"])
        .arg(&p)
        .status()
        .unwrap();
    assert!(st.success());
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("# digest="));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 51 * 25);
}

#[test]
fn bad_arguments_are_rejected() {
    let st = drlfwd().arg("frobnicate").output().unwrap();
    assert_eq!(st.status.code(), Some(1));
    assert!(drlfwd().arg("--help").output().unwrap().status.success());
}
