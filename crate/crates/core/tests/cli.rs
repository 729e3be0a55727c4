use std::fs;
use std::path::Path;

use auxinv::cli::run_from;
use auxinv::report::{mean_std, sha256_hex, AggregateReport};

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["auxinv"];
    v.extend_from_slice(args);
    run_from(v)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(run(&["gen-data", "--kind", "six-tuple", "--count", "0", "--out", p(&out)]), 1);
    assert_eq!(run(&["gen-data", "--kind", "nonsense", "--count", "3", "--out", p(&out)]), 1);
    assert_eq!(run(&["gen-data", "--kind", "six-tuple", "--count", "3", "--out", p(&out), "--grammar", "/nope.cfg"]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&["train-ngram", "--data", p(&out), "--out", p(&out.join("m.bin"))]), 1);
    assert_eq!(run(&["report", "--run-dir", p(dir.path()), "--out", p(&out)]), 1);
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a model").unwrap();
    assert_eq!(run(&["generate-text", "--model", p(&junk)]), 1);
}

#[test]
fn six_tuple_generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert_eq!(run(&["gen-data", "--kind", "six-tuple", "--count", "40", "--seed", "9", "--out", p(out)]), 0);
    }
    let text = read(&a.join("six_tuples.tsv"));
    assert_eq!(text.lines().count(), 240);
    assert_eq!(auxinv::transform::parse_six_tuples(&text).unwrap().len(), 40);
    assert_eq!(
        sha256_hex(read(&a.join("six_tuples.tsv")).as_bytes()),
        sha256_hex(read(&b.join("six_tuples.tsv")).as_bytes())
    );
    assert_eq!(read(&a.join("manifest.json")), read(&b.join("manifest.json")));
    let manifest: serde_json::Value = serde_json::from_str(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["items"], 40);
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["files"]["six_tuples.tsv"], sha256_hex(text.as_bytes()));

    let c = dir.path().join("c");
    assert_eq!(run(&["gen-data", "--kind", "six-tuple", "--count", "40", "--seed", "10", "--out", p(&c)]), 0);
    assert_ne!(read(&c.join("six_tuples.tsv")), text);
}

#[test]
fn population_standard_deviation() {
    let (m, s) = mean_std(&[0.2, 0.5, 0.8]);
    assert!((m - 0.5).abs() < 1e-12);
    assert!((s - 0.2449).abs() < 1e-4);
    assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
}

fn pipeline_data(root: &Path) {
    let data = root.join("data");
    assert_eq!(
        run(&[
            "gen-data", "--kind", "corpus", "--count", "1500", "--doc-size", "30", "--seed", "4", "--out",
            p(&root.join("raw")),
        ]),
        0
    );
    assert_eq!(
        run(&["preprocess", "--corpus", p(&root.join("raw/corpus")), "--out", p(&data), "--min-count", "1"]),
        0
    );
    for (kind, dir) in [("six-tuple", "six"), ("move-one", "move"), ("pairs-neq", "neq"), ("pairs-eq", "eq")] {
        assert_eq!(
            run(&["gen-data", "--kind", kind, "--count", "30", "--seed", "5", "--out", p(&root.join(dir))]),
            0
        );
    }
}

#[test]
fn single_model_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline_data(root);
    let data = root.join("data");
    for f in ["train.txt", "valid.txt", "test.txt", "vocab.tsv", "preprocess.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let model = root.join("ngram.bin");
    let arpa = root.join("ngram.arpa");
    assert_eq!(
        run(&["train-ngram", "--data", p(&data), "--out", p(&model), "--order", "3", "--arpa", p(&arpa)]),
        0
    );
    assert!(read(&arpa).starts_with("\\data\\"));
    let metrics: serde_json::Value = serde_json::from_str(&read(&root.join("ngram.bin.metrics.json"))).unwrap();
    assert!(metrics["test_perplexity"].as_f64().unwrap() > 1.0);

    let out = root.join("eval");
    let m = p(&model);
    let cases: Vec<Vec<String>> = vec![
        vec!["perplexity".into(), p(&data.join("test.txt")).into()],
        vec!["six-way".into(), p(&root.join("six/six_tuples.tsv")).into()],
        vec![
            "six-way".into(),
            p(&root.join("six/six_tuples.tsv")).into(),
            "--metric".into(),
            "slor".into(),
            "--unigram-train".into(),
            p(&data.join("train.txt")).into(),
        ],
        vec!["minimal-pairs".into(), p(&root.join("move/move_one.tsv")).into()],
        vec![
            "question-formation".into(),
            p(&root.join("neq/pairs.txt")).into(),
            "--annotations".into(),
            p(&root.join("neq/annotations.jsonl")).into(),
        ],
    ];
    for c in &cases {
        let mut args = vec!["eval", "--model", m, "--out", p(&out), "--protocol", &c[0], "--data", &c[1]];
        args.extend(c[2..].iter().map(String::as_str));
        assert_eq!(run(&args), 0, "{c:?}");
    }
    let six: serde_json::Value = serde_json::from_str(&read(&out.join("six-way-six_tuples.six_way.json"))).unwrap();
    let total: f64 = six["proportions"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let qf: serde_json::Value =
        serde_json::from_str(&read(&out.join("question-formation-pairs.qf_summary.json"))).unwrap();
    assert!(qf["first_word_accuracy"].as_f64().unwrap() >= qf["full_question_accuracy"].as_f64().unwrap());
    assert!(out.join("question-formation-pairs.qf_breakdown.csv").exists());
    assert!(out.join("minimal-pairs-move_one.report.csv").exists());

    // Missing annotations are an input error, not a crash.
    assert_eq!(
        run(&[
            "eval", "--model", m, "--out", p(&out), "--protocol", "question-formation", "--data",
            p(&root.join("neq/pairs.txt")), "--annotations", p(&root.join("nope.jsonl")),
        ]),
        1
    );

    let agg = root.join("agg");
    assert_eq!(run(&["report", "--run-dir", p(&out), "--out", p(&agg)]), 0);
    let first = read(&agg.join("aggregate.json"));
    assert_eq!(run(&["report", "--run-dir", p(&out), "--out", p(&agg)]), 0);
    assert_eq!(read(&agg.join("aggregate.json")), first);
    let report: AggregateReport = serde_json::from_str(&first).unwrap();
    assert!(report.rows.iter().all(|r| r.runs == 1 && r.std == 0.0));
    assert!(read(&agg.join("aggregate.csv")).lines().count() > report.rows.len());

    assert_eq!(run(&["generate-text", "--model", m, "--prefix", "the", "--length", "8", "--seed", "3"]), 0);
}

#[test]
fn neural_training_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline_data(root);
    let data = root.join("data");
    let model = root.join("lstm.bin");
    let args = [
        "train-lm", "--data", p(&data), "--out", p(&model), "--arch", "lstm", "--hidden", "16", "--embedding", "16",
        "--layers", "1", "--epochs", "1", "--max-batches", "5", "--f32",
    ];
    assert_eq!(run(&args), 0);
    assert!(read(&root.join("lstm.bin.log.csv")).lines().count() >= 2);
    let out = root.join("eval");
    assert_eq!(
        run(&[
            "eval", "--model", p(&model), "--out", p(&out), "--protocol", "question-formation", "--data",
            p(&root.join("eq/pairs.txt")), "--annotations", p(&root.join("eq/annotations.jsonl")),
        ]),
        0
    );
    let qf: serde_json::Value =
        serde_json::from_str(&read(&out.join("question-formation-pairs.qf_summary.json"))).unwrap();
    assert_eq!(qf["linear_rate"], qf["hierarchical_rate"]);
    assert_eq!(
        run(&["generate-text", "--model", p(&model), "--length", "5", "--temperature", "0"]),
        0
    );
    assert_eq!(run(&["train-lm", "--data", p(&data), "--out", p(&model), "--dropout", "1.5"]), 1);
}

#[test]
fn experiment_config_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline_data(root);
    let cfg = serde_json::json!({
        "data_dir": root.join("data"),
        "output_dir": root.join("runs"),
        "grammars": ["prepose_delete"],
        "models": [
            {"name": "kn3", "type": "ngram", "order": 3},
            {"name": "tiny-lstm", "type": "neural", "config": {
                "architecture": "lstm", "layers": 1, "hidden": 8, "embedding": 8, "epochs": 1, "precision": "f32"}}
        ],
        "seeds": [1, 2],
        "evaluations": [
            {"protocol": "six-way", "data": root.join("six/six_tuples.tsv")},
            {"protocol": "perplexity", "data": root.join("data/test.txt")}
        ]
    });
    let cfg_path = root.join("experiment.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let c = p(&cfg_path);
    let agg = root.join("agg");

    assert_eq!(run(&["train-ngram", "--config", c]), 0);
    // Neural checkpoints are still missing.
    assert_eq!(run(&["eval", "--config", c]), 1);
    assert_eq!(run(&["eval", "--config", c, "--allow-partial"]), 0);
    assert_eq!(run(&["report", "--config", c, "--out", p(&agg)]), 1);
    assert_eq!(run(&["report", "--config", c, "--out", p(&agg), "--allow-partial"]), 0);

    assert_eq!(run(&["train-lm", "--config", c, "--max-batches", "3"]), 0);
    assert_eq!(run(&["eval", "--config", c]), 0);
    assert_eq!(run(&["report", "--config", c, "--out", p(&agg)]), 0);
    let first = read(&agg.join("aggregate.json"));
    let report: AggregateReport = serde_json::from_str(&first).unwrap();
    assert_eq!(report.std_convention, "population");
    assert!(report.config_hash.is_some());
    assert!(report.grammar_hashes.contains_key("prepose_delete"));
    let models: std::collections::BTreeSet<&str> = report.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(models.into_iter().collect::<Vec<_>>(), vec!["kn3", "tiny-lstm"]);
    assert!(report.rows.iter().all(|r| r.runs == 2));
    // N-gram estimation ignores the seed.
    assert!(report.rows.iter().filter(|r| r.model == "kn3").all(|r| r.std == 0.0));
    assert_eq!(run(&["report", "--config", c, "--out", p(&agg)]), 0);
    assert_eq!(read(&agg.join("aggregate.json")), first);

    let bad = root.join("bad.json");
    fs::write(&bad, "{\"data_dir\": 3}").unwrap();
    assert_eq!(run(&["eval", "--config", p(&bad)]), 1);
}
