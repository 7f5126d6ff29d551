use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use tempfile::TempDir;

use treesdp::io::{self, Document, ProblemFile};

const WORKED_EXAMPLE: &str = r#"{
  "format": "coupled-sdp",
  "n": 5,
  "subproblems": [
    {"J": [1, 2, 4], "W": [2, 0.5, 0, 2, 0.3, 2], "Q": [[0, 0, 0.5, 0, 0, 0], [1, 0, 0, 0, 0, 0]], "b": [0, 2]},
    {"J": [1, 3, 4], "W": [2, -0.2, 0, 2, 0.1, 2], "Q": [[0, 0, 0, 1, 0, 0]], "b": [1]},
    {"J": [4, 5], "W": [1, 0.4, 1], "Q": [[0, 0, 1]], "b": [1]}
  ]
}
"#;

fn treesdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treesdp"))
        .args(args)
        .output()
        .unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treesdp"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout));
    })
}

fn worked_example(dir: &TempDir) -> PathBuf {
    let p = dir.path().join("example.json");
    std::fs::write(&p, WORKED_EXAMPLE).unwrap();
    p
}

#[test]
fn decompose_reports_the_worked_example_tree() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &["decompose", worked_example(&dir).to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["cliques"], 3);
    let mut sizes: Vec<u64> = r["clique_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    sizes.sort_unstable();
    assert_eq!(sizes, [2, 3, 3]);
    assert_eq!(r["max_clique"], 3);
    assert_eq!(r["fill_percent"], 0.0);
    // Every subproblem lands on exactly one agent.
    let assigned: usize = r["assignment"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_array().unwrap().len())
        .sum();
    assert_eq!(assigned, 3);
}

#[test]
fn solve_writes_round_trippable_solution_and_trace() {
    let dir = TempDir::new().unwrap();
    let input = worked_example(&dir);
    let sol = dir.path().join("sol.json");
    let trace = dir.path().join("trace.csv");
    let out = treesdp(&[
        "solve",
        input.to_str().unwrap(),
        "-o",
        sol.to_str().unwrap(),
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(json(&out)["status"], "optimal");

    let text = std::fs::read_to_string(&sol).unwrap();
    let Document::Solution(file) = io::parse_document(&text).unwrap() else {
        panic!("not a solution document");
    };
    assert_eq!(io::solution_to_json(&file), text);
    assert_eq!(file.blocks.len(), 3);

    let rows = io::read_trace(std::fs::File::open(&trace).unwrap()).unwrap();
    assert_eq!(rows.len() as u64, file.iterations as u64);
    let header = std::fs::read_to_string(&trace).unwrap();
    assert!(
        header.starts_with("iter,mu,r_primal_sq,r_dual_sq,alpha_p,alpha_d,sigma,passes,messages")
    );

    assert_eq!(
        treesdp(&["check", sol.to_str().unwrap()]).status.code(),
        Some(0)
    );
}

#[test]
fn generated_files_round_trip_exactly() {
    let dir = TempDir::new().unwrap();
    let sys = dir.path().join("sys.json");
    let prob = dir.path().join("prob.json");
    let out = treesdp(&[
        "generate-scalefree",
        "--n",
        "12",
        "--seed",
        "4",
        "--frequencies",
        "0.5,2",
        "-o",
        sys.to_str().unwrap(),
        "--problem-out",
        prob.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let text = std::fs::read_to_string(&sys).unwrap();
    let Document::System(s, md) = io::parse_document(&text).unwrap() else {
        panic!("not a system document");
    };
    assert_eq!(io::system_to_json(&s, &md), text);

    let text = std::fs::read_to_string(&prob).unwrap();
    let Document::Problem(p @ ProblemFile::Inequality(_), md) = io::parse_document(&text).unwrap()
    else {
        panic!("not an inequality problem");
    };
    assert_eq!(io::problem_to_json(&p, &md), text);
}

#[test]
fn runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let input = worked_example(&dir);
    let mut files = Vec::new();
    for k in 0..2 {
        let sol = dir.path().join(format!("sol{k}.json"));
        let trace = dir.path().join(format!("trace{k}.csv"));
        let out = treesdp(&[
            "solve",
            input.to_str().unwrap(),
            "--seed",
            "3",
            "-o",
            sol.to_str().unwrap(),
            "--trace-out",
            trace.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        files.push((
            std::fs::read(sol).unwrap(),
            std::fs::read(trace).unwrap(),
            out.stdout,
        ));
    }
    assert!(files[0] == files[1]);
}

#[test]
fn central_and_distributed_modes_agree() {
    let dir = TempDir::new().unwrap();
    let input = worked_example(&dir);
    let run = |mode: &str| {
        let out = treesdp(&[
            "solve",
            input.to_str().unwrap(),
            "--mode",
            mode,
            "--seed",
            "7",
        ]);
        assert_eq!(out.status.code(), Some(0));
        json(&out)
    };
    let c = run("central");
    let d = run("distributed");
    assert_eq!(c["status"], d["status"]);
    let (a, b) = (
        c["primal_objective"].as_f64().unwrap(),
        d["primal_objective"].as_f64().unwrap(),
    );
    assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn small_chain_is_certified_quickly() {
    let dir = TempDir::new().unwrap();
    let sys = dir.path().join("chain.json");
    let gen = treesdp(&[
        "generate-chain",
        "--n",
        "2",
        "--seed",
        "1",
        "-o",
        sys.to_str().unwrap(),
    ]);
    assert_eq!(gen.status.code(), Some(0));
    let t = Instant::now();
    let out = treesdp(&["analyze", sys.to_str().unwrap()]);
    assert!(t.elapsed().as_secs_f64() < 1.0);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["verdict"], "feasible-multiplier");
    assert_eq!(r["frequencies"][0]["certificate"]["holds"], true);
}

#[test]
fn excessive_gain_is_reported_as_no_certificate() {
    let dir = TempDir::new().unwrap();
    let sys = dir.path().join("chain.json");
    treesdp(&[
        "generate-chain",
        "--n",
        "2",
        "--seed",
        "1",
        "-o",
        sys.to_str().unwrap(),
    ]);
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&sys).unwrap()).unwrap();
    // A direct feedthrough of gain 5 around a unit-norm uncertainty.
    doc["responses"][0][0]["gpq"]["re"] = serde_json::json!([5.0]);
    doc["responses"][0][0]["gpq"]["im"] = serde_json::json!([0.0]);
    std::fs::write(&sys, doc.to_string()).unwrap();

    let out = treesdp(&["analyze", sys.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let r = json(&out);
    assert_eq!(r["verdict"], "no-certificate");
    assert_ne!(r["frequencies"][0]["status"], "optimal");
    assert!(String::from_utf8_lossy(&out.stderr).contains("sufficient condition"));
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let dir = TempDir::new().unwrap();
    let input = worked_example(&dir);
    let input = input.to_str().unwrap();

    let missing = treesdp(&["solve", "/nonexistent/problem.json"]);
    assert_eq!(missing.status.code(), Some(66));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/problem.json"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, WORKED_EXAMPLE.replace("\"b\": [1]", "\"b\": \"one\"")).unwrap();
    let malformed = treesdp(&["solve", bad.to_str().unwrap()]);
    assert_eq!(malformed.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&malformed.stderr).contains("subproblems[1].b"));

    let truncated = dir.path().join("truncated.json");
    std::fs::write(&truncated, &WORKED_EXAMPLE[..120]).unwrap();
    let out = treesdp(&["decompose", truncated.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    assert_eq!(
        treesdp(&["solve", input, "--tau", "1.5"]).status.code(),
        Some(64)
    );
    assert_eq!(
        treesdp(&["solve", input, "--mode", "sideways"])
            .status
            .code(),
        Some(64)
    );
    assert_eq!(treesdp(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(
        treesdp(&["solve", input, "--max-iters", "1"]).status.code(),
        Some(3)
    );

    let infeasible = dir.path().join("infeasible.json");
    std::fs::write(
        &infeasible,
        r#"{"format": "coupled-sdp", "n": 2, "subproblems": [{"J": [1, 2], "W": [1, 0, 1], "Q": [[1, 0, 1]], "b": [-1]}]}"#,
    )
    .unwrap();
    let out = treesdp(&["solve", infeasible.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["status"], "diverging-dual");
}
