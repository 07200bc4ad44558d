use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ihisd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ihisd")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    ihisd(args).status.code().expect("exit code")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

const FIG1_X0: &str = "1.492273,-1.006348";

#[test]
fn search_reaches_the_transition_state() {
    let dir = tempfile::tempdir().unwrap();
    let (out, traj) = (path(dir.path(), "r.json"), path(dir.path(), "t.csv"));
    let args = [
        "search", "--energy", "butterfly", "--param", "c=1", "--x0", FIG1_X0, "--index", "1", "--dir", "up",
        "--alpha0", "1e-9", "--out", &out, "--traj", &traj,
    ];
    assert_eq!(code(&args), 0);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["status"], "converged");
    assert_eq!(doc["index"], 1);
    let x: Vec<f64> = doc["x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(x.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-4);
    let csv = fs::read_to_string(&traj).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,t,alpha,energy,grad_norm,x0,x1");
}

#[test]
fn search_exit_codes() {
    let quad = ["--energy", "quadratic", "--param", "spectrum=-1,2", "--x0", "0.3,0.3"];
    let with = |extra: &[&str]| {
        let mut v = vec!["search"];
        v.extend_from_slice(&quad);
        v.extend_from_slice(extra);
        code(&v)
    };
    assert_eq!(with(&["--index", "1", "--alpha0", "1", "--eta", "0.1"]), 0);
    // Starts on the only stationary point, which has index 1.
    let at_origin = ["search", "--energy", "quadratic", "--param", "spectrum=-1,2", "--x0", "0,0", "--index", "0"];
    assert_eq!(code(&at_origin), 2);
    assert_eq!(with(&["--index", "1", "--alpha0", "1", "--eta", "0.1", "--max-iter", "3"]), 3);
    // Gradient ascent on a quadratic with a positive mode runs away.
    assert_eq!(with(&["--index", "0", "--alpha0", "1e-9", "--rate-c", "0", "--eta", "0.5"]), 3);
    assert_eq!(with(&["--index", "5"]), 1);
    assert_eq!(code(&["search", "--energy", "nosuch", "--x0", "0", "--index", "0"]), 1);
    assert_eq!(code(&["search", "--energy", "quadratic", "--param", "spectrum=1,2", "--x0", "0"]), 1);
}

#[test]
fn landscape_outputs_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (out, dot) = (path(dir.path(), "g.json"), path(dir.path(), "g.dot"));
    let args = [
        "landscape", "--energy", "morse", "--param", "a=1.5", "--param", "n=4", "--from-random-min", "--seed", "1",
        "--out", &out, "--dot", &dot,
    ];
    assert_eq!(code(&args), 0);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["vertices"].as_array().unwrap().len(), 4);
    let dot_text = fs::read_to_string(&dot).unwrap();
    assert!(dot_text.starts_with("digraph"));
    assert!(dot_text.trim_end().ends_with('}'));

    let single = ["landscape", "--energy", "quadratic", "--param", "spectrum=-1,2", "--seed-point", "0,0"];
    assert_eq!(code(&single), 0);
    let capped = [
        "landscape", "--energy", "morse", "--param", "a=1.5", "--param", "n=4", "--from-random-min", "--seed", "1",
        "--cap", "3",
    ];
    assert_eq!(code(&capped), 4);
}

#[test]
fn identical_arguments_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let (out, dot, r, t) = (
            path(dir.path(), &format!("{tag}.json")),
            path(dir.path(), &format!("{tag}.dot")),
            path(dir.path(), &format!("{tag}-r.json")),
            path(dir.path(), &format!("{tag}-t.csv")),
        );
        let land = [
            "landscape", "--energy", "morse", "--param", "a=1.5", "--param", "n=4", "--from-random-min", "--seed",
            "2", "--out", &out, "--dot", &dot,
        ];
        assert_eq!(code(&land), 0);
        let search = [
            "search", "--energy", "butterfly", "--param", "c=1", "--x0", FIG1_X0, "--index", "1", "--out", &r,
            "--traj", &t,
        ];
        assert_eq!(code(&search), 0);
        [out, dot, r, t].map(|p| fs::read(p).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn verify_exit_codes() {
    assert_eq!(code(&["verify", "--suite", "alpha"]), 0);
    assert_eq!(code(&["verify", "--suite", "rate"]), 0);
    assert_eq!(code(&["verify", "--suite", "nosuch"]), 1);
    let out = ihisd(&["verify", "--suite", "pitchfork"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn flow_modes() {
    let dir = tempfile::tempdir().unwrap();
    let traj = path(dir.path(), "f.csv");
    let base = ["flow", "--energy", "butterfly", "--param", "c=1", "--x0", FIG1_X0];
    let with = |extra: &[&str]| {
        let mut v = base.to_vec();
        v.extend_from_slice(extra);
        code(&v)
    };
    assert_eq!(with(&["--mode", "ascent"]), 5);
    assert_eq!(with(&["--mode", "gad", "--t-max", "50"]), 3);
    assert_eq!(with(&["--mode", "ihisd", "--alpha0", "1e-7", "--traj", &traj]), 0);
    let csv = fs::read_to_string(&traj).unwrap();
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(last[4] < 1e-6);
    assert!(last[5].hypot(last[6]) < 1e-4);
    assert_eq!(with(&["--mode", "descent", "--h", "0"]), 1);
}

#[test]
fn dump_config_round_trips() {
    let out = ihisd(&["search", "--energy", "butterfly", "--param", "c=1", "--x0", "0,0", "--index", "1", "--dump-config"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["index"], 1);
    assert_eq!(doc["alpha0"], 1e-9);
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&[]), 1);
}
