use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mvsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvsim"))
        .args(args)
        .env_remove("MVSIM_OUT_DIR")
        .output()
        .expect("spawn mvsim")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn never_preset_serves_only_the_first_version() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = mvsim(&[
        "run",
        "--preset",
        "oran-edge",
        "--policies",
        "never",
        "--seeds",
        "3",
        "--events",
        "40000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let trace = fs::read_to_string(out.join("runs/never/seed-3/trace.csv")).unwrap();
    let mut lines = trace.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "served_version").unwrap();
    let mut rows = 0;
    for l in lines {
        assert_eq!(l.split(',').nth(col), Some("0"), "{l}");
        rows += 1;
    }
    assert!(rows > 15_000, "{rows}");
}

#[test]
fn one_run_directory_per_policy_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvsim(&[
        "run",
        "--policies",
        "always,random,rl",
        "--seeds",
        "1-2,5",
        "--events",
        "5000",
        "--parallel",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let mut dirs = Vec::new();
    for p in fs::read_dir(dir.path().join("runs")).unwrap() {
        for s in fs::read_dir(p.unwrap().path()).unwrap() {
            dirs.push(s.unwrap().path());
        }
    }
    assert_eq!(dirs.len(), 9);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["policies"].as_array().unwrap().len(), 3);
    assert_eq!(summary["policies"][2]["runs"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("runs/rl/seed-5/qtable.csv").exists());
    assert!(!dir.path().join("runs/always/seed-5/qtable.csv").exists());
}

#[test]
fn manifest_reproduces_byte_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = mvsim(&[
        "run",
        "--seeds",
        "7,8",
        "--events",
        "8000",
        "--curve-mode",
        "percent-step",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let o = mvsim(&[
        "run",
        "--manifest",
        a.join("manifest.json").to_str().unwrap(),
        "--parallel",
        "3",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 5 * 2 * 3 + 2 + 3);
    assert!(ta == tb, "outputs differ");

    // summarize rebuilds the same summary from the traces alone
    let before = fs::read(a.join("summary.json")).unwrap();
    fs::remove_file(a.join("summary.json")).unwrap();
    let o = mvsim(&["summarize", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), before);
}

#[test]
fn existing_output_needs_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["run", "--policies", "never", "--seeds", "1", "--events", "2000", "--out", out];
    assert!(mvsim(&args).status.success());
    let o = mvsim(&args);
    assert!(!o.status.success());
    assert!(text(&o).contains("--overwrite"), "{}", text(&o));
    let mut with = args.to_vec();
    with.push("--overwrite");
    let o = mvsim(&with);
    assert!(o.status.success(), "{}", text(&o));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mvsim"))
        .args(["run", "--policies", "never", "--seeds", "1", "--events", "2000"])
        .env("MVSIM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o));
    assert!(dir.path().join("manifest.json").exists());
}

const SCENARIO: &str = r#"
[run]
seeds = [1]
horizon_events = 1000

[[nodes]]
name = "edge"
layer = "edge"
cpu = 32
ram_gb = 32
disk_gb = "unlimited"
"#;

#[test]
fn validate_reports_errors_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, SCENARIO).unwrap();
    let o = mvsim(&["validate", "--scenario", good.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let t = text(&o);
    assert!(t.contains("warning:") && t.contains("2 warnings"), "{t}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SCENARIO.replace("cpu = 32", "cpu = -4")).unwrap();
    let o = mvsim(&["validate", "--scenario", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(text(&o).contains("error: nodes[0].cpu"), "{}", text(&o));

    let typo = dir.path().join("typo.toml");
    fs::write(&typo, SCENARIO.replace("horizon_events", "horizon_evnts")).unwrap();
    let o = mvsim(&["validate", "--scenario", typo.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(text(&o).contains("horizon_evnts"), "{}", text(&o));

    let o = mvsim(&["validate", "--preset", "nope"]);
    assert!(!o.status.success());
    assert!(text(&o).contains("oran-edge"));
}

#[test]
fn plot_data_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(mvsim(&["run", "--policies", "rl", "--seeds", "1-2", "--events", "4000", "--out", out])
        .status
        .success());
    let o = mvsim(&["plot-data", "--out", out, "--points", "10"]);
    assert!(o.status.success(), "{}", text(&o));
    let curves = fs::read_to_string(dir.path().join("plot/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 6 * 2001);
    assert!(curves.lines().any(|l| l.starts_with("ML-d1,2000,10.0,0.5,1,0.7")), "last release row");
    let eps = fs::read_to_string(dir.path().join("plot/epsilon.csv")).unwrap();
    assert_eq!(eps.lines().count(), 12);
    assert_eq!(eps.lines().nth(1), Some("0,1"));
    assert_eq!(eps.lines().last(), Some("4000,0.001"));
}
