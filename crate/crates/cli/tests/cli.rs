use std::path::Path;
use std::process::Command;

use stirring_cli::manifest::{sha256_hex, ExperimentManifest};
use stirring_cli::{parse, run};

fn args(dir: &Path, rest: &str) -> Vec<String> {
    let mut v = vec!["stirring".to_string()];
    v.extend(rest.split_whitespace().map(String::from));
    v.push("--out".into());
    v.push(dir.display().to_string());
    v
}

fn manifest(dir: &Path, sub: &str) -> ExperimentManifest {
    ExperimentManifest::from_json(&std::fs::read_to_string(dir.join(format!("{sub}.manifest.json"))).unwrap()).unwrap()
}

fn csv(dir: &Path, sub: &str) -> String {
    std::fs::read_to_string(dir.join(format!("{sub}.csv"))).unwrap()
}

fn num(m: &ExperimentManifest, key: &str) -> f64 {
    m.summary[key].parse().unwrap()
}

#[test]
fn pairstats_example_writes_survival_table() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        run(args(
            d.path(),
            "pairstats --n 1 --x1 0 --x2 1 --t 1 --replicas 100000 --seed 7"
        )),
        0
    );
    let text = csv(d.path(), "pairstats");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# manifest: pairstats.manifest.json"));
    assert_eq!(lines.next(), Some("s,micro_s,survival"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 41);
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0] && w[1][2] <= w[0][2]));
    let m = manifest(d.path(), "pairstats");
    assert_eq!(m.seed, 7);
    assert_eq!(m.params["replicas"], "100000");
    assert_eq!(m.outputs[0].sha256, sha256_hex(text.as_bytes()));
}

#[test]
fn exact_duality_example_is_within_tolerance() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(args(d.path(), "exact --check duality --n 2 --t 0.5")), 0);
    let m = manifest(d.path(), "exact");
    assert!(num(&m, "max_error") <= 1e-9);
    // 5 starts, 5 + 10 site sets.
    assert_eq!(m.outputs[0].rows, 75);
}

#[test]
fn hydro_example_writes_boundary_trace() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        run(args(d.path(), "hydro --u0 const:0.5 --j 1 --k 1 --t 1 --h 1e-3")),
        0
    );
    let text = csv(d.path(), "hydro");
    assert_eq!(text.lines().nth(1), Some("time,u_plus,u_minus"));
    assert_eq!(text.lines().count(), 2 + 1001);
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((last[0] - 1.0).abs() < 1e-12);
    assert!((last[1] + last[2] - 1.0).abs() < 1e-7);
    assert!(num(&manifest(d.path(), "hydro"), "residual") <= 1e-8);
}

#[test]
fn manifests_round_trip() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(args(d.path(), "estimates --t 0.3,2 --n-max 6")), 0);
    let m = manifest(d.path(), "estimates");
    assert_eq!(ExperimentManifest::from_json(&m.to_json()).unwrap(), m);
    let mut odd = m.clone();
    odd.wall_clock_seconds = 0.1 + 0.2;
    assert_eq!(ExperimentManifest::from_json(&odd.to_json()).unwrap(), odd);
}

#[test]
fn replaying_a_manifest_reproduces_the_table() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(
        run(args(
            a.path(),
            "simulate --n 4 --t 0.2,0.4 --replicas 200 --seed 13 --eta0 sin:0.5:0.3"
        )),
        0
    );
    let cfg = a.path().join("simulate.manifest.json").display().to_string();
    assert_eq!(run(args(b.path(), &format!("simulate --config {cfg}"))), 0);
    assert_eq!(csv(a.path(), "simulate"), csv(b.path(), "simulate"));
    let (ma, mb) = (manifest(a.path(), "simulate"), manifest(b.path(), "simulate"));
    assert_eq!(ma.params, mb.params);
    assert_eq!(ma.outputs, mb.outputs);
}

#[test]
fn flags_override_the_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "# pde run\nn = 6\nt = 0.05, 0.1\nu0 = sin:0.5:0.25\n").unwrap();
    assert_eq!(run(args(d.path(), &format!("pde --config {} --n 4", cfg.display()))), 0);
    let m = manifest(d.path(), "pde");
    assert_eq!(m.params["n"], "4");
    assert_eq!(m.params["u0"], "sin:0.5:0.25");
    assert_eq!(m.outputs[0].rows, 2 * 9);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(args(d.path(), "pde --n 3 --k 4")), 1);
    assert_eq!(run(args(d.path(), "pde --bogus 1")), 2);
    assert_eq!(run(args(d.path(), "frobnicate")), 2);
    assert_eq!(run(args(d.path(), "pde --n three")), 2);
    assert_eq!(run(args(d.path(), "exact --check nothing")), 2);
    assert_eq!(run(args(d.path(), "exact --check identity --n 6")), 1);
    let cfg = d.path().join("bad.cfg");
    std::fs::write(&cfg, "replicas = 10\n").unwrap();
    assert_eq!(run(args(d.path(), &format!("pde --config {}", cfg.display()))), 2);
    // A failed check still leaves its table behind.
    assert_eq!(run(args(d.path(), "exact --check chapman --n 2 --t 0.5 --tol 0")), 1);
    assert!(manifest(d.path(), "exact").summary.contains_key("failure"));
}

#[test]
fn help_is_not_an_error() {
    assert_eq!(run(["stirring", "--help"]), 0);
    assert!(parse(["stirring", "pde", "--help"]).unwrap().is_none());
}

#[test]
fn every_subcommand_runs() {
    let d = tempfile::tempdir().unwrap();
    for cmd in [
        "simulate --n 3 --t 0.5 --replicas 64",
        "pde --n 8 --t 0.1,0.2",
        "hydro --u0 sin:0.5:0.25 --t 0.2 --h 1e-2 --n 20",
        "vfn --n 4 --sites -1,1;0,1 --replicas 64",
        "vfn --n 20 --mode blocks --a 0.5 --replicas 32",
        "exact --check chapman --n 2",
        "exact --check identity --n 3 --k 1",
        "exact --check v --n 2 --t 0,0.5 --eta0 10110",
        "duality --n 3 --replicas 200",
        "couple --n 10 --t 0.5 --replicas 50",
        "pairstats --n 10 --replicas 200",
        "estimates",
    ] {
        assert_eq!(run(args(d.path(), cmd)), 0, "{cmd}");
    }
    let m = manifest(d.path(), "exact");
    assert_eq!(m.params["check"], "v");
    let text = csv(d.path(), "exact");
    let t0: Vec<&str> = text
        .lines()
        .skip(2)
        .filter(|l| l.split(',').nth(1) == Some("0.0000000000000000e0"))
        .collect();
    assert!(!t0.is_empty() && t0.iter().all(|l| l.ends_with(",0.0000000000000000e0")));
}

fn binary(dir: &Path, rest: &str, threads: usize) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_stirring"))
        .args(rest.split_whitespace())
        .args(["--threads", &threads.to_string()])
        .env("STIRRING_OUT_DIR", dir)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let sub = rest.split_whitespace().next().unwrap();
    std::fs::read(dir.join(format!("{sub}.csv"))).unwrap()
}

#[test]
fn output_directory_from_environment_and_thread_independence() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cmd = "couple --n 20 --t 0.3 --replicas 300 --seed 5";
    assert_eq!(binary(a.path(), cmd, 1), binary(b.path(), cmd, 3));
}
