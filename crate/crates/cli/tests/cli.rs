use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn portrait(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_portrait"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn portrait")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = portrait(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.cfg"), "# small run\nbatch_size=4\nseed=3\n").unwrap();
    let with = |rest: &[&'static str]| -> Vec<&'static str> { [&["--config", "run.cfg"][..], rest].concat() };

    ok(d, &with(&["gen-data", "--out", "data", "--n", "12"]));
    assert!(d.join("data/manifest.csv").exists());
    assert!(d.join("data/00000.wav").exists());

    let table = ok(d, &with(&["prior-table", "--data", "data", "--ns", "2,4,6"]));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "cohort,n1,n2,l1");
    assert!(lines.len() > 1);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));

    ok(d, &with(&["prior-build", "--data", "data", "--out", "priors"]));
    ok(d, &with(&["train-fd", "--data", "data", "--out", "fd.ck", "--log", "fd.csv", "--epochs", "1"]));
    let log = fs::read_to_string(d.join("fd.csv")).unwrap();
    assert!(log.starts_with("step,L_image,L_CS,L_total"));
    assert_eq!(log.lines().count(), 1 + 3);

    ok(
        d,
        &with(&[
            "train-se", "--data", "data", "--fd", "fd.ck", "--priors", "priors", "--out", "se.ck",
            "--log", "se.csv", "--epochs", "1",
        ]),
    );
    let log = fs::read_to_string(d.join("se.csv")).unwrap();
    assert!(log.starts_with("step,L_unit,L_fc1,L_fc3,L_total"));

    ok(
        d,
        &with(&["infer", "--audio", "data/00001.wav", "--se", "se.ck", "--fd", "fd.ck", "--priors", "priors", "--out", "face.png"]),
    );
    let png = fs::read(d.join("face.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    assert_eq!(u32::from_be_bytes(png[16..20].try_into().unwrap()), 32);
    assert_eq!(u32::from_be_bytes(png[20..24].try_into().unwrap()), 32);

    let eval = ["eval", "--data", "data", "--fd", "fd.ck", "--priors", "priors", "--se", "se.ck", "--face-to-face"];
    let a = ok(d, &with(&eval));
    let b = ok(d, &with(&eval));
    assert_eq!(a, b);
    assert!(a.starts_with("model,l1,l2,cos_deg,l1p,l2p,cos_deg_p,n\n"));
    assert_eq!(a.lines().count(), 3);

    // infer without priors on a fusion model is a runtime failure
    let out = portrait(d, &with(&["infer", "--audio", "data/00001.wav", "--se", "se.ck", "--fd", "fd.ck", "--out", "x.png"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--priors"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = portrait(tmp.path(), &["gen-data", "--out", "x", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = portrait(tmp.path(), &["eval", "--data", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = portrait(tmp.path(), &["train-fd", "--data", "nowhere", "--out", "fd.ck"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    fs::write(tmp.path().join("bad.cfg"), "lr=abc\n").unwrap();
    let out = portrait(tmp.path(), &["--config", "bad.cfg", "gen-data", "--out", "d", "--n", "2"]);
    assert_eq!(out.status.code(), Some(1));
}
