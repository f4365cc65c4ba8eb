use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cadact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadact")).args(args).env_remove("CADACT_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cadact(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in.cadseq");
    let ds = tmp.path().join("ds");
    let qs = tmp.path().join("qs");
    ok(&["generate", "--out", s(&input), "--count", "4", "--seed", "3", "--centered", "0.5"]);
    assert_eq!(fs::read_to_string(&input).unwrap().lines().count(), 4);

    let report = ok(&["validate", s(&input), "--stats-csv", s(&tmp.path().join("seq.csv"))]);
    assert_eq!(report.lines().filter(|l| l.ends_with("\tok")).count(), 4);

    let trace = ok(&["compile", s(&input), "--index", "1"]);
    assert!(trace.lines().count() > 10);

    ok(&["build", "--input", s(&input), "--out", s(&ds), "--resolution", "48", "--seed", "3"]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(ds.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], 4);

    let (sj, sc) = (tmp.path().join("stats.json"), tmp.path().join("stats.csv"));
    ok(&["stats", s(&ds), "--json", s(&sj), "--csv", s(&sc)]);
    assert!(fs::read_to_string(&sc).unwrap().starts_with("section,key,value"));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sj).unwrap()).unwrap();
    assert_eq!(stats["sequence_lengths"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum::<u64>(), 4);

    let (ej, ec) = (tmp.path().join("eval.json"), tmp.path().join("eval.csv"));
    ok(&["eval", "--pred", s(&ds), "--gt", s(&ds), "--json", s(&ej), "--csv", s(&ec)]);
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ej).unwrap()).unwrap();
    assert_eq!(eval["mu_cmd"], 1.0);
    assert_eq!(fs::read_to_string(&ec).unwrap().lines().count(), 2);

    ok(&["vqa", "generate", "--dataset", s(&ds), "--out", s(&qs), "--n", "3", "--families", "extrusion-count,hole_detection"]);
    assert!(qs.join("extrusion_count.json").is_file());
    let audit = ok(&["vqa", "audit", "--questions", s(&qs), "--dataset", s(&ds)]);
    assert_eq!(audit.lines().collect::<Vec<_>>(), ["extrusion_count\t3/3", "hole_detection\t3/3"]);

    let questions: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(qs.join("extrusion_count.json")).unwrap()).unwrap();
    let answers: Vec<u64> = questions.iter().map(|q| q["answer_index"].as_u64().unwrap()).collect();
    let responses = tmp.path().join("responses.json");
    fs::write(&responses, serde_json::to_string(&answers).unwrap()).unwrap();
    let grades: serde_json::Value =
        serde_json::from_str(&ok(&["vqa", "grade", "--questions", s(&qs), "--responses", s(&responses)])).unwrap();
    assert_eq!(grades[0]["family"], "extrusion_count");
    assert_eq!(grades[0]["accuracy"], 1.0);
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let run = |out: &Path, seed: &str| {
        let st = Command::new(env!("CARGO_BIN_EXE_cadact"))
            .args(["generate", "--out", s(out), "--count", "3"])
            .env("CADACT_SEED", seed)
            .status()
            .unwrap();
        assert!(st.success());
    };
    run(&a, "5");
    run(&b, "5");
    run(&c, "6");
    let read = |p: &Path| fs::read_to_string(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn configuration_errors_exit_nonzero() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in.cadseq");
    ok(&["generate", "--out", s(&input), "--count", "1"]);
    let out = s(&tmp.path().join("ds")).to_string();
    assert!(!cadact(&["build", "--input", s(&input), "--out", &out, "--workers", "0"]).status.success());
    assert!(!cadact(&["build", "--input", "/nonexistent/in.cadseq", "--out", &out]).status.success());
    assert!(!cadact(&["generate", "--out", &out, "--centered", "2"]).status.success());
    assert!(!cadact(&["vqa", "generate", "--dataset", &out, "--out", &out, "--families", "bogus"]).status.success());
    assert!(!cadact(&["stats", s(tmp.path())]).status.success());
}

#[test]
fn corrupt_lines_do_not_abort_a_build() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in.cadseq");
    ok(&["generate", "--out", s(&input), "--count", "2"]);
    let mut text = fs::read_to_string(&input).unwrap();
    text.push_str("broken|7,7,7\n");
    fs::write(&input, text).unwrap();
    let ds = tmp.path().join("ds");
    ok(&["build", "--input", s(&input), "--out", s(&ds), "--resolution", "32", "--no-frames"]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(ds.join("summary.json")).unwrap()).unwrap();
    assert_eq!((summary["sequences"].as_u64(), summary["failed"].as_u64()), (Some(3), Some(1)));
}
