use std::path::Path;
use std::process::{Command, Output};

use btrads_core::pipeline::{read_jsonl, write_jsonl, CaseReport};
use btrads_core::CaseRecord;

fn btrads(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btrads"))
        .args(args)
        .env_remove("BTRADS_LLM_ENDPOINT")
        .env_remove("BTRADS_LLM_MODEL")
        .env_remove("BTRADS_LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path) {
    let out = btrads(&["fixtures", "generate", "--profile", "paper", "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fixtures_score_evaluate_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let fx = d.path().join("fx");
    generate(&fx);
    for f in ["cases.jsonl", "volumes.csv", "attributions.jsonl", "config.toml", "note_corpus.jsonl"] {
        assert!(fx.join(f).exists(), "{f}");
    }
    let reports = d.path().join("reports.jsonl");
    let exclusions = d.path().join("exclusions.jsonl");
    let out = btrads(&[
        "score",
        "--cases",
        s(&fx.join("cases.jsonl")),
        "--config",
        s(&fx.join("config.toml")),
        "--out",
        s(&reports),
        "--exclusions",
        s(&exclusions),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scored: Vec<CaseReport> = read_jsonl(&reports).unwrap();
    assert_eq!(scored.len(), 492);

    let eval = d.path().join("eval.json");
    let confusion = d.path().join("confusion.csv");
    let out = btrads(&[
        "evaluate",
        "--reports",
        s(&reports),
        "--exclusions",
        s(&exclusions),
        "--config",
        s(&fx.join("config.toml")),
        "--out",
        s(&eval),
        "--confusion",
        s(&confusion),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tables = String::from_utf8(out.stdout).unwrap();
    assert!(tables.contains("374/492    76.0%"), "{tables}");
    assert!(tables.contains("509 input"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(v["system_accuracy"]["correct"], 374);
    assert!(std::fs::read_to_string(&confusion).unwrap().lines().count() >= 9);
}

#[test]
fn score_can_populate_a_store() {
    let d = tempfile::tempdir().unwrap();
    let fx = d.path().join("fx");
    generate(&fx);
    let store = d.path().join("store");
    let out = btrads(&[
        "score",
        "--cases",
        s(&fx.join("cases.jsonl")),
        "--config",
        s(&fx.join("config.toml")),
        "--out",
        s(&d.path().join("r.jsonl")),
        "--store",
        s(&store),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let opened = btrads_core::store::CaseStore::open(&store).unwrap();
    assert_eq!(opened.len(), 492);
    assert!(store.join("exclusions.jsonl").exists());
}

#[test]
fn extract_prints_three_variables() {
    let d = tempfile::tempdir().unwrap();
    let note = d.path().join("note.txt");
    std::fs::write(&note, "Completed chemoradiation on 2023-03-14. Continues dexamethasone 2 mg daily. Not on bevacizumab.").unwrap();
    let out = btrads(&["extract", "--note", s(&note), "--backend", "patterns"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["steroid_status"], "active");
    assert_eq!(v["bevacizumab_status"], "none");
    assert_eq!(v["radiation_completion_date"], "2023-03-14");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(btrads(&[]).status.code(), Some(1));
    assert_eq!(btrads(&["score"]).status.code(), Some(1));
    assert_eq!(btrads(&["fixtures", "generate", "--profile", "other", "--out", "x"]).status.code(), Some(1));
    assert_eq!(btrads(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("cases.jsonl");
    std::fs::write(&bad, "{\"case_id\": 5}\n").unwrap();
    let out = btrads(&["score", "--cases", s(&bad), "--out", s(&d.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    let missing = btrads(&["evaluate", "--reports", s(&d.path().join("nope.jsonl")), "--out", s(&d.path().join("e.json"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn unreachable_llm_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let fx = d.path().join("fx");
    generate(&fx);
    let all: Vec<CaseRecord> = read_jsonl(fx.join("cases.jsonl")).unwrap();
    let few: Vec<CaseRecord> = all.into_iter().filter(|c| c.baseline_date.is_some()).take(4).collect();
    let cases = d.path().join("few.jsonl");
    write_jsonl(&cases, &few).unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let cfg = d.path().join("llm.toml");
    std::fs::write(
        &cfg,
        format!(
            "[backend]\nkind = \"remote_llm\"\nendpoint_url = \"http://127.0.0.1:{port}/v1/chat/completions\"\nmodel_name = \"m\"\ntimeout_secs = 2\n"
        ),
    )
    .unwrap();
    let out = btrads(&["score", "--cases", s(&cases), "--config", s(&cfg), "--out", s(&d.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let note = d.path().join("n.txt");
    std::fs::write(&note, "Some note.").unwrap();
    let out = btrads(&["extract", "--note", s(&note), "--backend", "llm", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
}
