use std::path::Path;
use std::process::{Command, Output};

use cc_core::census::CensusReport;
use cc_core::poly::PolySystem;
use cc_core::tracker::SolutionSet;
use serde_json::Value;

fn ccsolve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccsolve")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_summary_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("ac4.txt");
    let o = ccsolve(&["gen", "--bodies", "4", "--out", p(&sys)]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["total_degree"], "2985984");
    assert_eq!(v["variables"], 12);
    let parsed = PolySystem::from_text(&std::fs::read_to_string(&sys).unwrap()).unwrap();
    assert_eq!(parsed.len(), 12);

    let o = ccsolve(&["gen", "--bodies", "3"]);
    assert_eq!(code(&o), 0);
    assert!(PolySystem::from_text(&String::from_utf8(o.stdout).unwrap()).is_ok());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&ccsolve(&["gen"])), 1);
    assert_eq!(code(&ccsolve(&["gen", "--bodies", "3", "--masses", "1,2"])), 1);
    assert_eq!(code(&ccsolve(&["gen", "--bodies", "3", "--masses", "1,-2,1"])), 1);
    assert_eq!(code(&ccsolve(&["frobnicate"])), 1);
    assert_eq!(code(&ccsolve(&["seeded-census", "--bodies", "4"])), 1);
    assert_eq!(code(&ccsolve(&["mv", "--system", "/nonexistent/system.txt"])), 1);
}

#[test]
fn budget_refusals_exit_3() {
    let o = ccsolve(&["census", "--bodies", "5"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeded-census"));

    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("ac3.txt");
    assert_eq!(code(&ccsolve(&["gen", "--bodies", "3", "--out", p(&sys)])), 0);
    let o = ccsolve(&["solve", "--system", p(&sys), "--method", "td", "--budget", "100", "--quiet"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn three_body_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("ac3.txt");
    let sols = dir.path().join("sols.json");
    let report = dir.path().join("report.json");
    assert_eq!(code(&ccsolve(&["gen", "--bodies", "3", "--out", p(&sys)])), 0);

    let o = ccsolve(&["mv", "--system", p(&sys), "--seed", "2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["mixed_volume"], "171");

    let o = ccsolve(&["solve", "--system", p(&sys), "--out", p(&sols), "--chunk", "32"]);
    assert_eq!(code(&o), 0);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.lines().any(|l| l.starts_with("chunk 0 done: c=")));
    let set: SolutionSet = serde_json::from_str(&std::fs::read_to_string(&sols).unwrap()).unwrap();
    assert_eq!(set.stats.total_paths, 171);

    let o = ccsolve(&["certify", "--system", p(&sys), "--solutions", p(&sols)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["certified"], 7);

    let o = ccsolve(&["classify", "--solutions", p(&sols), "--bodies", "3", "--out", p(&report)]);
    assert_eq!(code(&o), 0);
    let r: CensusReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.physical_solutions, 4);
    assert_eq!(r.classes.len(), 2);

    let o = ccsolve(&["embed", "--classes", p(&report)]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(v.as_array().unwrap().iter().all(|c| c["max_distance_error"].as_f64().unwrap() < 1e-9));

    // the solution file has 6 coordinates per point, 4 bodies need 12
    assert_eq!(code(&ccsolve(&["classify", "--solutions", p(&sols), "--bodies", "4"])), 1);
}

#[test]
fn embed_of_impossible_distances_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let o = ccsolve(&["census", "--bodies", "3", "--quiet", "--out", p(&report)]);
    assert_eq!(code(&o), 0);
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    // violates the triangle inequality
    v["classes"][0]["representative"] = serde_json::json!([1.0, 1.0, 3.0]);
    std::fs::write(&report, v.to_string()).unwrap();
    assert_eq!(code(&ccsolve(&["embed", "--classes", p(&report)])), 2);
}

#[test]
fn checkpointed_solve_resumes_to_the_same_file() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("ac3.txt");
    let ck = dir.path().join("job.ckpt");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert_eq!(code(&ccsolve(&["gen", "--bodies", "3", "--out", p(&sys)])), 0);
    let base = ["solve", "--system", p(&sys), "--chunk", "20", "--quiet", "--checkpoint", p(&ck)];
    assert_eq!(code(&ccsolve(&[&base[..], &["--out", p(&a)]].concat())), 0);
    assert_eq!(code(&ccsolve(&[&base[..], &["--resume", "--out", p(&b)]].concat())), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let mut bytes = std::fs::read(&ck).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&ck, bytes).unwrap();
    let o = ccsolve(&[&base[..], &["--resume"]].concat());
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stale or corrupt"));
}

#[test]
fn seeded_census_runs() {
    let o = ccsolve(&["seeded-census"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: CensusReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.classes.len(), 10);
    assert_eq!(r.physical_solutions, 258);
}
