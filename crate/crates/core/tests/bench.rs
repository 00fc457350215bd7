use std::fs;
use std::path::Path;
use std::sync::Arc;

use cellbench::bench::report::{plotdata, read_records, summary_header};
use cellbench::bench::run::{RUN_FILE, SUMMARY_CSV_FILE, SUMMARY_JSON_FILE};
use cellbench::bench::{report, run, run_with_client, ReportFormat, RunConfig, RunStatus};
use cellbench::dataset::{
    collection_paths, synthesize_dataset, write_dataset, Dataset, Label, LabelRule, MatrixFormat, SyntheticSpec,
};
use cellbench::embedding::{write_embeddings, EmbeddingMatrix, PoolingKind};
use cellbench::eval::{aggregate, Metric, Strategy};
use cellbench::prompt::{format_answers, LlmClient};
use cellbench::{Error, Result};

fn write_study(dir: &Path, spec: SyntheticSpec, study: &str, tissue: &str) -> Dataset {
    let mut ds = synthesize_dataset(&spec).unwrap();
    ds.manifest.study_id = study.into();
    ds.manifest.tissue = tissue.into();
    let (m, j) = collection_paths(dir, study, MatrixFormat::Dense);
    write_dataset(&ds, &m, &j).unwrap();
    ds
}

fn config(collection: &Path, out: &Path, extra: serde_json::Value) -> RunConfig {
    let mut v = serde_json::json!({
        "config_version": 1,
        "collections": [collection],
        "axis": "tissue",
        "models": ["toy_scfm"],
        "strategies": ["frozen", "finetune"],
        "head": {"epochs": 10},
        "finetune": {"epochs": 3, "learning_rate": 0.005, "batch_size": 32, "hidden1": 32, "hidden2": 8},
        "toy_encoder": {"max_len": 16},
        "out_dir": out,
    });
    for (k, val) in extra.as_object().unwrap() {
        v[k] = val.clone();
    }
    RunConfig::from_json(&v.to_string()).unwrap()
}

fn toy_collection(dir: &Path) {
    write_study(dir, SyntheticSpec::new(150, 24, LabelRule::Interaction, 1), "study-a", "tumor");
}

#[test]
fn toy_run_emits_twenty_records_and_reproduces_summaries() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    toy_collection(data.path());
    let cfg = config(data.path(), out.path(), serde_json::json!({}));

    let first = run(&cfg).unwrap();
    assert_eq!(first.status, RunStatus::Complete);
    assert_eq!(first.records.len(), 20);
    assert_eq!(first.summaries.len(), 2);
    for f in ["config.json", "run.json", "records.jsonl", "records.csv", "summary.csv", "summary.json", "splits.json"] {
        assert!(first.dir.join(f).is_file(), "{f} missing");
    }
    let snapshot = RunConfig::from_path(&first.dir.join("config.json")).unwrap();
    assert_eq!(snapshot, cfg);

    let second = run(&cfg).unwrap();
    assert_ne!(first.dir, second.dir);
    for f in [SUMMARY_CSV_FILE, SUMMARY_JSON_FILE, "splits.json"] {
        assert_eq!(fs::read(first.dir.join(f)).unwrap(), fs::read(second.dir.join(f)).unwrap(), "{f} differs");
    }
    let strip = |r: &cellbench::eval::ResultRecord| {
        let mut r = r.clone();
        r.seconds = 0.0;
        r
    };
    assert_eq!(
        first.records.iter().map(strip).collect::<Vec<_>>(),
        second.records.iter().map(strip).collect::<Vec<_>>()
    );
}

#[test]
fn both_strategies_share_one_split_plan() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    toy_collection(data.path());
    let outcome = run(&config(data.path(), out.path(), serde_json::json!({"seeds": [3, 4]}))).unwrap();
    assert_eq!(outcome.splits.len(), 2);
    assert_ne!(outcome.splits[0].plan, outcome.splits[1].plan);
    // every record of a (seed, fold) has the same test size whatever the strategy
    for seed in [3, 4] {
        let sizes = |s: Strategy| -> Vec<usize> {
            outcome
                .records
                .iter()
                .filter(|r| r.seed == seed && r.strategy == s)
                .map(|r| r.n_test)
                .collect()
        };
        assert_eq!(sizes(Strategy::Frozen), sizes(Strategy::Finetuned));
    }
}

#[test]
fn report_formats_agree_with_aggregate() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_study(data.path(), SyntheticSpec::new(60, 16, LabelRule::Linear, 2), "s1", "tumor");
    write_study(data.path(), SyntheticSpec::new(60, 16, LabelRule::Linear, 3), "s2", "blood");
    write_study(data.path(), SyntheticSpec::new(60, 16, LabelRule::Linear, 4), "s3", "bone marrow");
    let outcome = run(&config(
        data.path(),
        out.path(),
        serde_json::json!({"strategies": ["frozen"], "folds": 3}),
    ))
    .unwrap();
    let records = read_records(&outcome.dir).unwrap();
    let expected = aggregate(&records).unwrap();
    assert_eq!(expected.len(), 3);

    let files = report(&outcome.dir, ReportFormat::Csv, None).unwrap();
    let mut rdr = csv::Reader::from_path(&files[0]).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, summary_header());
    for (row, want) in rdr.records().zip(&expected) {
        let row = row.unwrap();
        assert_eq!(&row[4], want.category);
        for (k, m) in Metric::ALL.into_iter().enumerate() {
            let ms = want.metrics[&m];
            assert_eq!(row[6 + 2 * k].parse::<f64>().unwrap(), ms.mean);
            assert_eq!(row[7 + 2 * k].parse::<f64>().unwrap(), ms.std);
        }
    }

    let files = report(&outcome.dir, ReportFormat::Structured, None).unwrap();
    let parsed: Vec<cellbench::eval::SummaryRow> = serde_json::from_str(&fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(parsed, expected);

    let files = report(&outcome.dir, ReportFormat::Plotdata, None).unwrap();
    let plot: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files[0]).unwrap()).unwrap();
    let cats: Vec<&str> = plot["radars"][0]["categories"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(cats, vec!["blood", "bone marrow", "tumor"]);
    assert_eq!(plotdata(&expected).radars.len(), Metric::ALL.len());
}

#[test]
fn empty_run_directory_cannot_be_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("records.jsonl"), "").unwrap();
    assert!(matches!(report(dir.path(), ReportFormat::Csv, None), Err(Error::Evaluation(_))));
    let missing = tempfile::tempdir().unwrap();
    assert!(report(missing.path(), ReportFormat::Csv, None).is_err());
}

#[test]
fn missing_external_embeddings_name_the_expected_file() {
    let data = tempfile::tempdir().unwrap();
    let emb = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    toy_collection(data.path());
    let cfg = config(
        data.path(),
        out.path(),
        serde_json::json!({"models": ["scGPT"], "strategies": ["frozen"], "embeddings_dir": emb.path()}),
    );
    let err = run(&cfg).unwrap_err();
    let expected = emb.path().join("scGPT").join("study-a.emb");
    match &err {
        Error::MissingEmbeddings { path, .. } => assert_eq!(path, &expected),
        other => panic!("{other:?}"),
    }
    assert!(err.to_string().contains(&expected.display().to_string()));
}

#[test]
fn external_embeddings_feed_the_frozen_strategy() {
    let data = tempfile::tempdir().unwrap();
    let emb = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let ds = write_study(data.path(), SyntheticSpec::new(80, 16, LabelRule::Linear, 9), "study-e", "tumor");
    // a stub exporter: 512 columns whose first carries the label
    let n = ds.cells.len();
    let mut values = vec![0f32; n * 512];
    for (i, c) in ds.cells.iter().enumerate() {
        values[i * 512] = c.label.unwrap().as_f64() as f32;
        values[i * 512 + 1 + i % 7] = 1.0;
    }
    let ids: Vec<String> = ds.cells.iter().rev().map(|c| c.cell_id.clone()).collect();
    let rows: Vec<f32> = (0..n).rev().flat_map(|i| values[i * 512..(i + 1) * 512].to_vec()).collect();
    let m = EmbeddingMatrix::new("scGPT", Strategy::Frozen, PoolingKind::ClsToken, 512, rows, ids).unwrap();
    fs::create_dir_all(emb.path().join("scGPT")).unwrap();
    write_embeddings(&m, &emb.path().join("scGPT").join("study-e.emb")).unwrap();
    let cfg = config(
        data.path(),
        out.path(),
        serde_json::json!({"models": ["scGPT"], "strategies": ["frozen"], "folds": 4, "embeddings_dir": emb.path(),
                           "head": {"epochs": 30, "learning_rate": 0.01}}),
    );
    let outcome = run(&cfg).unwrap();
    assert_eq!(outcome.records.len(), 4);
    let f1 = outcome.summaries[0].metrics[&Metric::F1].mean;
    assert!(f1 > 0.95, "label-carrying stub should be learnable, got {f1}");
}

struct AlwaysSensitive;

impl LlmClient for AlwaysSensitive {
    fn send(&self, prompt: &str) -> Result<String> {
        let n = prompt
            .lines()
            .filter(|l| l.split_once(": ").is_some_and(|(i, _)| !i.is_empty() && i.chars().all(|c| c.is_ascii_digit())))
            .count();
        Ok(format_answers(&vec![Label::Sensitive; n]))
    }
}

#[test]
fn fewshot_strategy_runs_through_a_client() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    toy_collection(data.path());
    let cfg = config(
        data.path(),
        out.path(),
        serde_json::json!({"models": ["GPT4o-mini", "toy_scfm"], "strategies": ["fewshot"],
                           "llm": {"retry": {"max_attempts": 3, "base_delay_ms": 0}}}),
    );
    assert!(matches!(run(&cfg), Err(Error::Config(_))));
    let outcome = run_with_client(&cfg, Some(Arc::new(AlwaysSensitive))).unwrap();
    assert_eq!(outcome.records.len(), 10);
    assert!(outcome.records.iter().all(|r| r.metrics.recall == 1.0 && r.n_failed == 0));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(outcome.dir.join(RUN_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["skipped"].as_array().unwrap().len(), 1);
}

#[test]
fn failing_category_gives_partial_status() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_study(data.path(), SyntheticSpec::new(60, 16, LabelRule::Linear, 2), "big", "tumor");
    // five cells cannot fill ten folds
    write_study(data.path(), SyntheticSpec::new(5, 16, LabelRule::Linear, 3), "tiny", "blood");
    let outcome = run(&config(data.path(), out.path(), serde_json::json!({"strategies": ["frozen"]}))).unwrap();
    assert_eq!(outcome.status, RunStatus::Partial);
    assert_eq!(outcome.failures.len(), 1);
    assert_eq!(outcome.failures[0].category, "blood");
    assert!(outcome.dir.join("failures.json").is_file());
}

#[test]
fn inputs_are_not_modified() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    toy_collection(data.path());
    let snapshot = |p: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(p)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let before = snapshot(data.path());
    let outcome = run(&config(data.path(), out.path(), serde_json::json!({"strategies": ["frozen"]}))).unwrap();
    report(&outcome.dir, ReportFormat::Csv, None).unwrap();
    assert_eq!(snapshot(data.path()), before);
}

#[test]
fn profiling_writes_model_table() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    toy_collection(data.path());
    let outcome = run(&config(
        data.path(),
        out.path(),
        serde_json::json!({"strategies": ["frozen"], "profile_repeats": 3, "models": ["toy_scfm", "UCE"],
                           "embeddings_dir": null}),
    ));
    // UCE has no exchange files here
    assert!(matches!(outcome, Err(Error::MissingEmbeddings { .. })));
    let outcome = run(&config(
        data.path(),
        out.path(),
        serde_json::json!({"strategies": ["frozen"], "profile_repeats": 3}),
    ))
    .unwrap();
    let pair = &outcome.profiles[0];
    for r in [&pair.training, &pair.inference] {
        assert!((r.speed * r.seconds - r.iterations as f64).abs() <= 1e-6 * r.iterations as f64);
    }
    let files = report(&outcome.dir, ReportFormat::Csv, None).unwrap();
    let profiles = fs::read_to_string(files.iter().find(|p| p.ends_with("profiles.csv")).unwrap()).unwrap();
    assert!(profiles.starts_with(
        "model_id,params_millions,output_dim,inference_speed_its,inference_time_s,training_speed_its,training_time_s\n"
    ));
    assert!(profiles.lines().nth(1).unwrap().starts_with("toy_scfm,"));
}
