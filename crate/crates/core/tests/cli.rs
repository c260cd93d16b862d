//! End-to-end checks of the command-line surface: every subcommand, the
//! documented exit codes, and the golden comparison CSV.

mod common;

use common::{check_golden, fixtures, graphcap, stderr_of, stdout_of};

#[test]
fn help_lists_every_subcommand_and_flag() {
    let out = graphcap(&["--help"]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    for sub in ["run", "align", "stats", "cost"] {
        assert!(text.contains(sub), "missing subcommand {sub}");
    }
    let run_help = stdout_of(&graphcap(&["run", "--help"]));
    for flag in [
        "--config",
        "--backend",
        "--no-paraphrase",
        "--combined",
        "--out",
        "--cache",
        "--fixture",
        "--resume",
        "--concurrency",
    ] {
        assert!(run_help.contains(flag), "run --help missing {flag}");
    }
    let align_help = stdout_of(&graphcap(&["align", "--help"]));
    for flag in ["--lexeme", "--lexicon", "--hierarchical", "--group-size"] {
        assert!(align_help.contains(flag), "align --help missing {flag}");
    }
}

#[test]
fn unknown_flags_fail_nonzero() {
    let out = graphcap(&["run", "--definitely-not-a-flag"]);
    assert!(!out.status.success());
    let out = graphcap(&["frobnicate"]);
    assert!(!out.status.success());
}

#[test]
fn replay_with_cold_cache_is_a_backend_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = graphcap(&[
        "run",
        "--config",
        fixtures().join("run.toml").to_str().unwrap(),
        "--backend",
        "replay",
        "--out",
        dir.path().join("never.jsonl").to_str().unwrap(),
        "--cache",
        dir.path().join("empty_cache.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));
}

#[test]
fn missing_config_is_a_config_error() {
    let out = graphcap(&["run", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_with_all_captions_skipped_exits_partial() {
    // A token budget too small for any prompt: every caption fails at
    // render time, is logged and skipped, and the run completes partially.
    let dir = tempfile::tempdir().unwrap();
    let out = graphcap(&[
        "run",
        "--config",
        fixtures().join("run.toml").to_str().unwrap(),
        "--out",
        dir.path().join("dataset.jsonl").to_str().unwrap(),
        "--max-prompt-tokens",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("dataset.report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["extraction"]["skipped_captions"], 12);
    assert_eq!(report["dataset"]["triplets"], 0);
}

#[test]
fn no_paraphrase_run_reports_zero_paraphrase_calls() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("dataset.jsonl");
    let out = graphcap(&[
        "run",
        "--config",
        fixtures().join("run.toml").to_str().unwrap(),
        "--no-paraphrase",
        "--out",
        out_path.to_str().unwrap(),
        "--cache",
        dir.path().join("cache.jsonl").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_path.with_extension("report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["extraction"]["llm_paraphrased"], 0);
    let steps: Vec<&str> = report["tokens"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["step"].as_str().unwrap())
        .collect();
    assert!(!steps.contains(&"extract_paraphrase"));
    assert_eq!(report["metadata"]["use_paraphrase"], false);
}

#[test]
fn align_resolves_mock_fixture_answer() {
    let out = graphcap(&[
        "align",
        "--lexeme",
        "pigeon",
        "--lexicon",
        fixtures().join("vg_entities.txt").to_str().unwrap(),
        "--fixture",
        fixtures().join("mock_responses.jsonl").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_eq!(stdout_of(&out).trim(), "12.bird");
}

#[test]
fn align_self_alignment_needs_no_backend() {
    let out = graphcap(&[
        "align",
        "--lexeme",
        "near",
        "--lexicon",
        fixtures().join("vg_predicates.txt").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_eq!(stdout_of(&out).trim(), "29.near");
}

#[test]
fn align_hierarchical_walks_subgroups_to_the_answer() {
    let out = graphcap(&[
        "align",
        "--lexeme",
        "ramen",
        "--lexicon",
        fixtures().join("vinvl_sample.txt").to_str().unwrap(),
        "--hierarchical",
        "--group-size",
        "4",
        "--fixture",
        fixtures().join("mock_hierarchical.jsonl").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_eq!(stdout_of(&out).trim(), "11.noodle");
}

#[test]
fn align_unknown_lexeme_with_empty_mock_is_backend_failure() {
    let out = graphcap(&[
        "align",
        "--lexeme",
        "ramen",
        "--lexicon",
        fixtures().join("vg_entities.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn stats_reports_density_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("hist.csv");
    let sorted = dir.path().join("hist_sorted.csv");
    let out = graphcap(&[
        "stats",
        "--dataset",
        fixtures()
            .join("golden/llm_dataset.jsonl")
            .to_str()
            .unwrap(),
        "--lexicon",
        fixtures().join("vg_predicates.txt").to_str().unwrap(),
        "--images",
        "7",
        "--csv",
        csv.to_str().unwrap(),
        "--csv-sorted",
        sorted.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let stats: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(stats["triplet_count"], 18);
    assert_eq!(stats["image_count"], 7);
    assert_eq!(stats["zero_frequency_count"], 34);

    let hist = std::fs::read_to_string(&csv).unwrap();
    assert!(hist.starts_with("class,count\n"));
    assert_eq!(hist.lines().count(), 51);
    let sorted_csv = std::fs::read_to_string(&sorted).unwrap();
    // Frequency-descending: the two count-2 classes come first.
    let second_line = sorted_csv.lines().nth(1).unwrap();
    assert!(second_line.ends_with(",2"), "got {second_line}");
}

#[test]
fn stats_compare_emits_golden_delta_csv() {
    let out = graphcap(&[
        "stats",
        "--lexicon",
        fixtures().join("vg_predicates.txt").to_str().unwrap(),
        "--compare",
        fixtures()
            .join("golden/baseline_dataset.jsonl")
            .to_str()
            .unwrap(),
        fixtures()
            .join("golden/llm_dataset.jsonl")
            .to_str()
            .unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    check_golden("compare.csv", &stdout_of(&out));
    let summary = stderr_of(&out);
    assert!(summary.contains("zero-frequency delta -9"), "got {summary}");
}

#[test]
fn stats_on_empty_dataset_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = graphcap(&[
        "stats",
        "--dataset",
        empty.to_str().unwrap(),
        "--lexicon",
        fixtures().join("vg_predicates.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cost_reproduces_quoted_per_image_costs() {
    let out = graphcap(&[
        "cost",
        "--tokens",
        "0.52K,0.16K",
        "--prices",
        "0.0005,0.0015",
    ]);
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("$0.00050"));

    let out = graphcap(&[
        "cost",
        "--tokens",
        "0.52K,0.16K",
        "--tokens",
        "0.89K,0.48K",
        "--tokens",
        "1.18K,0.11K",
        "--tokens",
        "0.82K,0.11K",
        "--prices",
        "0.0005,0.0015",
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    for expected in ["$0.00050", "$0.00117", "$0.00076", "$0.00058"] {
        assert!(text.contains(expected), "{expected} missing from:\n{text}");
    }
    // The true sum is $0.002995; the total rounds as a whole rather than
    // summing the rounded per-step displays.
    assert!(text.contains("total: $0.00300"));

    let out = graphcap(&["cost", "--tokens", "0,0"]);
    assert!(stdout_of(&out).contains("$0.00000"));
}

#[test]
fn cost_reads_run_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("dataset.jsonl");
    let run = graphcap(&[
        "run",
        "--config",
        fixtures().join("run.toml").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let out = graphcap(&[
        "cost",
        "--report",
        out_path.with_extension("report.json").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    assert!(text.contains("extract_original:"));
    assert!(text.contains("total: $0.02466"));
}
