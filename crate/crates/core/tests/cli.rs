//! End-to-end runs of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

use dispflow::io::{read_image, read_sinogram};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dispflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Like [`ok`], returning the run summary printed on stderr.
fn ok_summary(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn pipeline_from_phantom_to_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["phantom", "--n", "32", "--out", &p(d, "p.pgm")]);
    ok(&[
        "sinogram",
        "--input",
        &p(d, "p.pgm"),
        "--angle-step",
        "pi/18",
        "--out",
        &p(d, "s.csv"),
    ]);
    ok(&[
        "perturb",
        "--input",
        &p(d, "p.pgm"),
        "--angle-step",
        "pi/18",
        "--a",
        "pi/18",
        "--seed",
        "3",
        "--out",
        &p(d, "q.csv"),
        "--displacements",
        &p(d, "disp.csv"),
    ]);
    let clean = read_sinogram(Path::new(&p(d, "s.csv"))).unwrap();
    let perturbed = read_sinogram(Path::new(&p(d, "q.csv"))).unwrap();
    assert_eq!(clean.n_angles(), 18);
    assert_eq!(clean.field().n1(), perturbed.field().n1());
    assert!(Path::new(&p(d, "disp.csv")).exists());

    let summary = ok_summary(&[
        "flow",
        "--input",
        &p(d, "q.csv"),
        "--k",
        "1",
        "--p",
        "2",
        "--q",
        "1",
        "--t-end",
        "1e-4",
        "--out",
        &p(d, "f.csv"),
        "--residuals",
        &p(d, "res.csv"),
    ]);
    assert!(summary.contains("steps="), "{summary}");
    // the header survives, so the flowed data is still a sinogram
    let flowed = read_sinogram(Path::new(&p(d, "f.csv"))).unwrap();
    assert_eq!(flowed.angles(), perturbed.angles());

    ok(&[
        "fbp",
        "--input",
        &p(d, "f.csv"),
        "--n",
        "32",
        "--out",
        &p(d, "r.pgm"),
    ]);
    assert_eq!(read_image(Path::new(&p(d, "r.pgm"))).unwrap().n1(), 32);

    let stdout = ok(&["metrics", &p(d, "r.pgm"), &p(d, "p.pgm"), "--csv"]);
    assert!(stdout.starts_with("metric,value\nrmse,"));
}

#[test]
fn varsolve_and_jitter_write_their_traces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["phantom", "--n", "24", "--out", &p(d, "p.pgm")]);
    ok(&[
        "perturb",
        "--input",
        &p(d, "p.pgm"),
        "--angle-step",
        "pi/12",
        "--a",
        "pi/24",
        "--out",
        &p(d, "q.csv"),
    ]);
    let summary = ok_summary(&[
        "varsolve",
        "--input",
        &p(d, "q.csv"),
        "--iterations",
        "3",
        "--out",
        &p(d, "v.csv"),
        "--trace",
        &p(d, "trace.csv"),
    ]);
    assert!(summary.contains("monotone=true"), "{summary}");
    let trace = std::fs::read_to_string(p(d, "trace.csv")).unwrap();
    assert_eq!(
        trace.lines().count(),
        1 + 3,
        "header and three iterations:\n{trace}"
    );
    assert!(trace.starts_with("m,Fc,R,"));

    ok(&[
        "jitter",
        "--input",
        &p(d, "p.pgm"),
        "--m",
        "2",
        "--out",
        &p(d, "j.pgm"),
        "--shifts",
        &p(d, "sh.csv"),
    ]);
    assert!(Path::new(&p(d, "sh.csv")).exists());
}

#[test]
fn experiment_from_config_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = p(d, "run.cfg");
    std::fs::write(
        &cfg,
        "[experiment]\nkind = tomography\nstages = phantom, sinogram, flow, fbp, metrics\n\n\
         [tomography]\nn = 24\nangle_step = pi/12\na = pi/24\nseed = 5\n\n[flow]\nt_end = 1e-4\n",
    )
    .unwrap();
    let out = p(d, "out");
    ok(&[
        "experiment",
        "--config",
        &cfg,
        "--out",
        &out,
        "--seed",
        "6",
        "--set",
        "flow.q=2",
    ]);
    let csv = std::fs::read_to_string(Path::new(&out).join("metrics.csv")).unwrap();
    assert!(csv.contains("uncorrected"), "{csv}");
    assert!(csv.contains("flow"), "{csv}");
    assert!(!Path::new(&out).join("INCOMPLETE").exists());
}

#[test]
fn errors_name_the_problem_and_fail() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = p(d, "missing.csv");
    let out = run(&[
        "flow",
        "--input",
        &missing,
        "--t-end",
        "1",
        "--out",
        &p(d, "x.csv"),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.csv"), "{err}");

    let cfg = p(d, "bad.cfg");
    std::fs::write(&cfg, "[tomography]\nn = 24\nthis line is broken\n").unwrap();
    let out = run(&["experiment", "--config", &cfg, "--out", &p(d, "o")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = run(&[
        "phantom",
        "--n",
        "32",
        "--variant",
        "nonsense",
        "--out",
        &p(d, "p.pgm"),
    ]);
    assert!(!out.status.success());
}
